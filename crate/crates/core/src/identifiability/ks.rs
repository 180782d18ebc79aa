use serde::{Deserialize, Serialize};

use super::{IdentError, SampleSet};

/// Largest `n·m` for which the p-value is computed exactly.
pub const EXACT_LIMIT: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsMethod {
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
    pub method: KsMethod,
}

/// Two-sample Kolmogorov-Smirnov test, two-sided.
///
/// `D` is kept as the integer `max |i·m − j·n|` over the pooled order so the
/// exact p-value compares lattice paths against it without rounding. Ties
/// are handled by only checking the ECDF gap between distinct pooled values.
pub fn ks_two_sample(x: &SampleSet, y: &SampleSet) -> Result<KsResult, IdentError> {
    if x.name != y.name {
        return Err(IdentError::Input(format!("samples for different parameters: {} vs {}", x.name, y.name)));
    }
    ks_two_sample_values(&x.values, &y.values)
}

pub fn ks_two_sample_values(x: &[f64], y: &[f64]) -> Result<KsResult, IdentError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(IdentError::Input("KS test needs at least 2 points per sample".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(IdentError::Input("KS samples must be finite".into()));
    }
    let (n, m) = (x.len() as u64, y.len() as u64);
    let pooled = pooled_labels(x, y);
    let d_num = gap_numerator(&pooled, n, m);
    let d = d_num as f64 / (n * m) as f64;
    if n * m <= EXACT_LIMIT {
        let p = exact_p(&pooled, n as usize, m as usize, d_num);
        Ok(KsResult { d, p, method: KsMethod::Exact })
    } else {
        let en = (n * m) as f64 / (n + m) as f64;
        Ok(KsResult { d, p: kolmogorov_sf(en.sqrt() * d), method: KsMethod::Asymptotic })
    }
}

/// Pooled values sorted ascending, tagged `true` for membership in `x`.
fn pooled_labels(x: &[f64], y: &[f64]) -> Vec<(f64, bool)> {
    let mut pooled: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    pooled
}

/// Positions `k` (items consumed) at which the ECDFs can be compared.
fn checkpoints(pooled: &[(f64, bool)]) -> Vec<bool> {
    let len = pooled.len();
    (0..=len).map(|k| k == len || (k > 0 && pooled[k - 1].0 < pooled[k].0)).collect()
}

fn gap_numerator(pooled: &[(f64, bool)], n: u64, m: u64) -> u64 {
    let check = checkpoints(pooled);
    let (mut i, mut j) = (0u64, 0u64);
    let mut best = 0;
    for (k, &(_, in_x)) in pooled.iter().enumerate() {
        if in_x {
            i += 1;
        } else {
            j += 1;
        }
        if check[k + 1] {
            best = best.max((i * m).abs_diff(j * n));
        }
    }
    best
}

/// Probability over all `C(n+m, n)` label assignments of the pooled sample
/// that the statistic reaches `d_num`.
///
/// Paths are absorbed the first time they hit; each hit contributes the
/// number of completions, so the count never needs `1 − small`.
fn exact_p(pooled: &[(f64, bool)], n: usize, m: usize, d_num: u64) -> f64 {
    if d_num == 0 {
        return 1.0;
    }
    let check = checkpoints(pooled);
    let binom = pascal(n + m);
    let completions = |i: usize, j: usize| binom[n - i + m - j][n - i];
    // alive[i][j]: paths to (i, j) that have not yet hit.
    let mut alive = vec![vec![0.0f64; m + 1]; n + 1];
    alive[0][0] = 1.0;
    let mut hits = 0.0;
    for k in 1..=n + m {
        let i_lo = k.saturating_sub(m);
        let i_hi = k.min(n);
        for i in (i_lo..=i_hi).rev() {
            let j = k - i;
            let mut v = 0.0;
            if i > 0 {
                v += alive[i - 1][j];
            }
            if j > 0 {
                v += alive[i][j - 1];
            }
            if check[k] && ((i as u64) * m as u64).abs_diff((j as u64) * n as u64) >= d_num {
                hits += v * completions(i, j);
                v = 0.0;
            }
            alive[i][j] = v;
        }
    }
    (hits / binom[n + m][n]).min(1.0)
}

fn pascal(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for r in 0..=n {
        let mut row = vec![1.0; r + 1];
        for c in 1..r {
            row[c] = rows[r - 1][c - 1] + rows[r - 1][c];
        }
        rows.push(row);
    }
    rows
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-theta form, fast for small lambda.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2) * c).map(f64::exp).sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test against a continuous CDF, asymptotic p-value.
pub fn ks_one_sample(values: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64), IdentError> {
    if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
        return Err(IdentError::Input("one-sample KS needs at least 2 finite points".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok((d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ss(v: &[f64]) -> SampleSet {
        SampleSet::new("x", v.to_vec()).unwrap()
    }

    /// Brute force over every subset of pooled positions labelled `x`.
    fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let (n, m) = (x.len(), y.len());
        let stat = |xs: &[f64], ys: &[f64]| -> u64 {
            let mut grid: Vec<f64> = xs.iter().chain(ys).copied().collect();
            grid.sort_by(f64::total_cmp);
            grid.iter()
                .map(|&t| {
                    let i = xs.iter().filter(|&&v| v <= t).count() as u64;
                    let j = ys.iter().filter(|&&v| v <= t).count() as u64;
                    (i * m as u64).abs_diff(j * n as u64)
                })
                .max()
                .unwrap()
        };
        let observed = stat(x, y);
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << (n + m)) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let (xs, ys): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
                pooled.iter().copied().enumerate().partition(|(k, _)| mask >> k & 1 == 1);
            let xs: Vec<f64> = xs.into_iter().map(|p| p.1).collect();
            let ys: Vec<f64> = ys.into_iter().map(|p| p.1).collect();
            total += 1;
            if stat(&xs, &ys) >= observed {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn identical_samples() {
        let r = ks_two_sample(&ss(&[1.0, 2.0, 2.0, 5.0]), &ss(&[5.0, 2.0, 1.0, 2.0])).unwrap();
        assert_eq!((r.d, r.p), (0.0, 1.0));
    }

    #[test]
    fn disjoint_triples() {
        let r = ks_two_sample(&ss(&[1.0, 2.0, 3.0]), &ss(&[11.0, 12.0, 13.0])).unwrap();
        assert_eq!(r.d, 1.0);
        assert_relative_eq!(r.p, 0.1, max_relative = 1e-15);
        assert_eq!(r.method, KsMethod::Exact);
    }

    #[test]
    fn interleaved_triples() {
        let r = ks_two_sample(&ss(&[1.0, 2.0, 3.0]), &ss(&[1.5, 2.5, 3.5])).unwrap();
        assert_relative_eq!(r.d, 1.0 / 3.0);
    }

    #[test]
    fn too_small_or_mismatched_samples_rejected() {
        assert!(ks_two_sample(&ss(&[1.0, 2.0]), &SampleSet { name: "x".into(), values: vec![1.0] }).is_err());
        let other = SampleSet::new("y", vec![1.0, 2.0]).unwrap();
        assert!(ks_two_sample(&ss(&[1.0, 2.0]), &other).is_err());
    }

    #[test]
    fn exact_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(2..=6);
            let m = rng.random_range(2..=6);
            // Small integer support forces ties within and across samples.
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64).collect();
            let r = ks_two_sample_values(&x, &y).unwrap();
            assert_eq!(r.p, brute_force_p(&x, &y), "x={x:?} y={y:?}");
        }
    }

    #[test]
    fn large_samples_use_asymptotics() {
        let x: Vec<f64> = (0..150).map(|k| k as f64).collect();
        let y: Vec<f64> = (0..100).map(|k| k as f64 + 0.5).collect();
        let r = ks_two_sample_values(&x, &y).unwrap();
        assert_eq!(r.method, KsMethod::Asymptotic);
        assert!(r.p > 0.0 && r.p <= 1.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Standard table values of the Kolmogorov distribution.
        assert_relative_eq!(kolmogorov_sf(1.3580986), 0.05, epsilon = 1e-6);
        assert_relative_eq!(kolmogorov_sf(1.6276236), 0.01, epsilon = 1e-6);
        // Both series agree where they meet.
        let a = 1.0 - 1e-12;
        assert_relative_eq!(kolmogorov_sf(a), kolmogorov_sf(1.0), epsilon = 1e-9);
    }

    #[test]
    fn null_p_values_are_super_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 10_000;
        for alpha in [0.01, 0.05, 0.1] {
            let mut rejections = 0;
            for _ in 0..trials {
                let x: Vec<f64> = (0..15).map(|_| rng.random()).collect();
                let y: Vec<f64> = (0..15).map(|_| rng.random()).collect();
                if ks_two_sample_values(&x, &y).unwrap().p <= alpha {
                    rejections += 1;
                }
            }
            let rate = rejections as f64 / trials as f64;
            assert!(rate <= alpha + 0.01, "alpha {alpha}: rate {rate}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            x in proptest::collection::vec(-5.0f64..5.0, 2..12),
            y in proptest::collection::vec(-5.0f64..5.0, 2..12),
        ) {
            let a = ks_two_sample_values(&x, &y).unwrap();
            let b = ks_two_sample_values(&y, &x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a.d) && (0.0..=1.0).contains(&a.p));
        }
    }
}
