use super::{DensitySpec, IdentError};
use crate::stats::{normal_pdf, std_normal_cdf};

/// `∫ min(f₁, f₂)` of two normal densities on the transformed scale.
pub fn overlap_index(d1: &DensitySpec, d2: &DensitySpec) -> Result<f64, IdentError> {
    if d1.transform != d2.transform {
        return Err(IdentError::Input(format!(
            "densities on different scales: {} vs {}",
            d1.transform.as_str(),
            d2.transform.as_str()
        )));
    }
    d1.validate()?;
    d2.validate()?;
    Ok(normal_overlap(d1.location, d1.spread, d2.location, d2.spread))
}

/// Overlap of `N(m1, s1²)` and `N(m2, s2²)` from the crossing points of the
/// two densities and normal CDF differences between them.
pub fn normal_overlap(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    // Order so that s1 <= s2; the narrower density is the minimum between
    // the crossings, the wider one outside them.
    let (m1, s1, m2, s2) = if s1 <= s2 { (m1, s1, m2, s2) } else { (m2, s2, m1, s1) };
    let cdf = |x: f64, m: f64, s: f64| std_normal_cdf((x - m) / s);
    let sf = |x: f64, m: f64, s: f64| std_normal_cdf((m - x) / s);
    if (s2 - s1) <= 1e-12 * s2 {
        if m1 == m2 {
            return 1.0;
        }
        let s = 0.5 * (s1 + s2);
        return (2.0 * std_normal_cdf(-(m1 - m2).abs() / (2.0 * s))).clamp(0.0, 1.0);
    }
    // log f1 = log f2  ⇔  a x² + b x + c = 0
    let (v1, v2) = (s1 * s1, s2 * s2);
    let a = 0.5 / v1 - 0.5 / v2;
    let b = m2 / v2 - m1 / v1;
    let c = 0.5 * m1 * m1 / v1 - 0.5 * m2 * m2 / v2 + (s1 / s2).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let sgn = if b < 0.0 { -1.0 } else { 1.0 };
    let q = -0.5 * (b + sgn * disc.sqrt());
    let (mut x1, mut x2) = (q / a, c / q);
    if x1 > x2 {
        std::mem::swap(&mut x1, &mut x2);
    }
    // Between the crossings the narrow density f1 is larger, so min = f2
    // there; outside them min = f1.
    let inside_f2 = cdf(x2, m2, s2) - cdf(x1, m2, s2);
    let outside_f1 = cdf(x1, m1, s1) + sf(x2, m1, s1);
    (inside_f2 + outside_f1).clamp(0.0, 1.0)
}

/// General fallback: `∫ min(f, g)` over `[lo, hi]` by adaptive Simpson.
pub fn overlap_by_quadrature(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let h = |x: f64| f(x).min(g(x));
    adaptive_simpson(&h, lo, hi, tol, 50)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    // Seed with a uniform split so narrow peaks are not missed.
    let pieces = 64;
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (l, r) = (a + k as f64 * w, a + (k + 1) as f64 * w);
            let (fl, fm, fr) = (f(l), f(0.5 * (l + r)), f(r));
            let whole = (r - l) / 6.0 * (fl + 4.0 * fm + fr);
            simpson_rec(f, l, r, fl, fm, fr, whole, tol / pieces as f64, max_depth)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Density of `d` on the linear scale (change of variables).
pub fn linear_scale_pdf(d: &DensitySpec, x: f64) -> f64 {
    if x <= 0.0 && d.transform != crate::population::Transform::Identity {
        return 0.0;
    }
    normal_pdf(d.transform.forward(x), d.location, d.spread) * d.transform.forward_derivative(x).abs()
}
