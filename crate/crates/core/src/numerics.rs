//! Small shared numerical routines: golden-section minimisation on an
//! interval, bisection root finding, and a least-squares slope.

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
///
/// The interval shrinks by the golden ratio each step until it is narrower
/// than `xtol`. Comparisons use `<=` so plateaus resolve toward the left,
/// and the original endpoints are kept as candidates so boundary minima are
/// returned exactly. Returns `(argmin, min)`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let xm = 0.5 * (a + b);
    let fm = f(xm);
    // endpoint minima are common here (monotone f), report them exactly
    let mut best = (xm, fm);
    for x in [hi, xm, lo] {
        let fx = f(x);
        if fx <= best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Minimum of `f` over an `n+1`-point uniform grid on `[lo, hi]`.
/// Ties resolve toward smaller x. Used as the independent oracle for
/// golden-section results.
pub fn grid_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let mut best = (lo, f(lo));
    for i in 1..=n {
        let x = lo + (hi - lo) * (i as f64) / (n as f64);
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Bisection for a root of `f` on `[lo, hi]`, assuming `f(lo)` and `f(hi)`
/// have opposite signs. Returns the midpoint once the bracket is below `xtol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Least-squares slope of y against x.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Quantile of a sorted slice by linear interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_interior_min() {
        let (x, v) = golden_min(|x| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_reports_boundary_exactly() {
        let (x, _) = golden_min(|x| x, 0.0, 1.0, 1e-10);
        assert_eq!(x, 0.0);
        let (x, _) = golden_min(|x| -x, 0.0, 1.0, 1e-10);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn golden_plateau_resolves_left() {
        let (x, _) = golden_min(|_| 1.0, 0.0, 1.0, 1e-10);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-10);
        assert!(bisect(|x| x + 1.0, 0.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn slope_of_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
        assert!((ls_slope(&pts) - 3.0).abs() < 1e-12);
    }
}
