//! Order-independent statistics and scaling-law fits.
//!
//! Aggregation sorts its input and sums pairwise, so summaries are
//! bit-identical no matter how replica rows arrive.

use crate::rng::CounterRng;
use crate::{HjError, Result};

/// Pairwise (cascade) summation of a slice in its given order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance; NaN when fewer than two rows.
    pub variance: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, unbiased variance and quantiles, computed on the sorted rows with
/// pairwise summation (permutation of the input cannot change a bit).
pub fn aggregate_stats(rows: &[f64]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(HjError::Stats("aggregate of an empty row set".into()));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let mean = pairwise_sum(&sorted) / n as f64;
    let variance = if n < 2 {
        f64::NAN
    } else {
        let sq: Vec<f64> = sorted.iter().map(|&x| (x - mean) * (x - mean)).collect();
        pairwise_sum(&sq) / (n as f64 - 1.0)
    };
    let quant = |p: f64| -> f64 {
        if n == 1 {
            return sorted[0];
        }
        let pos = p * (n as f64 - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    Ok(Summary {
        n,
        mean,
        variance,
        q50: quant(0.5),
        q90: quant(0.9),
        q99: quant(0.99),
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from (weighted) residuals.
    pub slope_se: f64,
}

/// Weighted least squares line through `(xs, ys)`.
pub fn weighted_linear_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() != ws.len() || xs.len() < 2 {
        return Err(HjError::Stats("need at least 2 matched points".into()));
    }
    let sw = pairwise_sum(ws);
    if sw <= 0.0 {
        return Err(HjError::Stats("nonpositive total weight".into()));
    }
    let wx: Vec<f64> = xs.iter().zip(ws).map(|(x, w)| x * w).collect();
    let wy: Vec<f64> = ys.iter().zip(ws).map(|(y, w)| y * w).collect();
    let xbar = pairwise_sum(&wx) / sw;
    let ybar = pairwise_sum(&wy) / sw;
    let sxx: Vec<f64> = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (x - xbar) * (x - xbar))
        .collect();
    let sxy: Vec<f64> = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .collect();
    let sxx = pairwise_sum(&sxx);
    if sxx <= 0.0 {
        return Err(HjError::Stats("degenerate x spread".into()));
    }
    let slope = pairwise_sum(&sxy) / sxx;
    let intercept = ybar - slope * xbar;
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    let res2: Vec<f64> = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| {
            let r = y - (intercept + slope * x);
            w * r * r
        })
        .collect();
    let sigma2 = pairwise_sum(&res2) / dof;
    Ok(LinearFit {
        slope,
        intercept,
        slope_se: (sigma2 / sxx).sqrt(),
    })
}

#[derive(Clone, Debug)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_used: usize,
    pub n_filtered: usize,
}

/// Least-squares slope on `(log x, log y)` with a bootstrap confidence
/// interval; nonpositive `y` are filtered (with the count reported).
pub fn fit_power_law(xs: &[f64], ys: &[f64], n_bootstrap: usize, seed: u64) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(HjError::Stats("mismatched x/y lengths".into()));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut filtered = 0usize;
    for (&x, &y) in xs.iter().zip(ys) {
        if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
            lx.push(x.ln());
            ly.push(y.ln());
        } else {
            filtered += 1;
        }
    }
    if lx.len() < 3 {
        return Err(HjError::Stats(format!(
            "power-law fit needs >= 3 usable points, got {} ({} filtered)",
            lx.len(),
            filtered
        )));
    }
    let w = vec![1.0; lx.len()];
    let fit = weighted_linear_fit(&lx, &ly, &w)?;

    let mut boots = Vec::with_capacity(n_bootstrap);
    let mut rng = CounterRng::new(crate::rng::key(&[seed, 0xb007]));
    for _ in 0..n_bootstrap {
        let mut bx = Vec::with_capacity(lx.len());
        let mut by = Vec::with_capacity(lx.len());
        for _ in 0..lx.len() {
            let k = (rng.next_u64() % lx.len() as u64) as usize;
            bx.push(lx[k]);
            by.push(ly[k]);
        }
        if let Ok(f) = weighted_linear_fit(&bx, &by, &w) {
            boots.push(f.slope);
        }
    }
    let (ci_lo, ci_hi) = if boots.len() >= 20 {
        boots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pick = |p: f64| boots[((boots.len() as f64 - 1.0) * p).round() as usize];
        (pick(0.025), pick(0.975))
    } else {
        (fit.slope - 1.96 * fit.slope_se, fit.slope + 1.96 * fit.slope_se)
    };
    Ok(PowerLawFit {
        exponent: fit.slope,
        intercept: fit.intercept,
        ci_lo,
        ci_hi,
        n_used: lx.len(),
        n_filtered: filtered,
    })
}

/// Spearman rank correlation (ties get average ranks).
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(HjError::Stats("rank correlation needs >= 3 pairs".into()));
    }
    let rank = |vs: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vs.len()).collect();
        idx.sort_by(|&a, &b| vs[a].partial_cmp(&vs[b]).unwrap());
        let mut ranks = vec![0.0; vs.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vs[idx[j + 1]] == vs[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = pairwise_sum(&rx) / n;
    let my = pairwise_sum(&ry) / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if dx <= 0.0 || dy <= 0.0 {
        return Err(HjError::Stats("constant sequence in rank correlation".into()));
    }
    Ok(num / (dx * dy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_variance_small_cases() {
        let s = aggregate_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.variance, 1.0);
        assert_eq!(s.q50, 2.0);
        let single = aggregate_stats(&[5.0]).unwrap();
        assert_eq!(single.mean, 5.0);
        assert!(single.variance.is_nan());
    }

    #[test]
    fn aggregation_is_permutation_invariant_bitwise() {
        let mut rng = CounterRng::new(99);
        let rows: Vec<f64> = (0..100_000).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut shuffled = rows.clone();
        // Fisher-Yates
        for i in (1..shuffled.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let a = aggregate_stats(&rows).unwrap();
        let b = aggregate_stats(&shuffled).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        assert_eq!(a.q99.to_bits(), b.q99.to_bits());
    }

    #[test]
    fn exact_quadratic_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let fit = fit_power_law(&xs, &ys, 200, 1).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!(fit.ci_lo <= 2.0 && 2.0 <= fit.ci_hi);
    }

    #[test]
    fn constant_data_has_zero_exponent() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys = [3.0, 3.0, 3.0, 3.0, 3.0];
        let fit = fit_power_law(&xs, &ys, 200, 2).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }

    #[test]
    fn noisy_two_thirds_exponent_recovered() {
        let mut rng = CounterRng::new(7);
        let xs: Vec<f64> = (1..=24).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.powf(2.0 / 3.0) * (1.0 + 0.01 * (rng.uniform() - 0.5)))
            .collect();
        let fit = fit_power_law(&xs, &ys, 200, 3).unwrap();
        assert!(
            fit.exponent > 0.6 && fit.exponent < 0.73,
            "exponent {}",
            fit.exponent
        );
    }

    #[test]
    fn nonpositive_ys_filtered_and_counted() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let ys = [1.0, -2.0, 4.0, 0.0, 16.0];
        let fit = fit_power_law(&xs, &ys, 50, 4).unwrap();
        assert_eq!(fit.n_used, 3);
        assert_eq!(fit.n_filtered, 2);
        assert!(fit_power_law(&xs[..3], &[1.0, -1.0, -1.0], 50, 5).is_err());
    }

    #[test]
    fn rank_correlation_signs() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rank_correlation(&xs, &[2.0, 4.0, 5.0, 9.0]).unwrap(), 1.0);
        assert_eq!(rank_correlation(&xs, &[9.0, 5.0, 4.0, 2.0]).unwrap(), -1.0);
    }

    #[test]
    fn weighted_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = weighted_linear_fit(&xs, &ys, &[1.0; 4]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.slope_se < 1e-10);
    }
}
