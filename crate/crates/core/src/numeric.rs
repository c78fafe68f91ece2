//! Small scalar routines shared by the solver and the mechanisms.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a unimodal `f` on `[lo, hi]` by golden-section search.
///
/// Stops once the bracket is narrower than `rel_tol * (hi - lo)` (absolute
/// floor `f64::EPSILON`), then returns the best of the final interior point
/// and the two endpoints of the original interval so boundary maxima are hit
/// exactly.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let width_tol = (rel_tol * (hi - lo)).max(f64::EPSILON);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > width_tol {
        if fc >= fd {
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
    let mid = 0.5 * (a + b);
    let candidates = [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))];
    candidates
        .iter()
        .copied()
        .fold((lo, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
        .0
}

/// Finds the root of a nonincreasing function `g` on `[lo, hi]` by bisection,
/// assuming `g(lo) > 0 >= g(hi)`. Runs until the bracket stops shrinking in
/// floating point.
pub fn bisect_decreasing<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Euclidean projection of `y` onto `{lo <= x <= hi, sum(x) <= budget}`
/// (or `sum(x) == budget` when `equality` is set).
///
/// Uses the standard shift characterization `x = clip(y - tau)` with the
/// scalar `tau` found by bisection.
pub fn project_box_budget(y: &[f64], lo: f64, hi: f64, budget: f64, equality: bool) -> Vec<f64> {
    let clip = |tau: f64| -> Vec<f64> { y.iter().map(|v| (v - tau).clamp(lo, hi)).collect() };
    let sum_at = |tau: f64| -> f64 { y.iter().map(|v| (v - tau).clamp(lo, hi)).sum() };

    let plain = clip(0.0);
    let plain_sum: f64 = plain.iter().sum();
    if plain_sum <= budget && (!equality || plain_sum == budget) {
        return plain;
    }
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // sum_at is nonincreasing in tau and spans [n*lo, n*hi] over this bracket.
    let mut t_lo = y_min - hi - 1.0;
    let mut t_hi = y_max - lo + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            break;
        }
        if sum_at(mid) > budget {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    clip(t_hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_interior_and_boundary_maxima() {
        let x = golden_section_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        let x = golden_section_max(|x| x, 0.0, 2.0, 1e-10);
        assert_eq!(x, 2.0);
        let x = golden_section_max(|x| -x, 0.0, 2.0, 1e-10);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn bisection_hits_root() {
        let r = bisect_decreasing(|x| 2.0 - x * x, 0.0, 2.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn projection_respects_box_and_budget() {
        let p = project_box_budget(&[0.9, 0.8, -0.2], 0.0, 1.0, 1.0, false);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((p[0] - 0.55).abs() < 1e-12 && (p[1] - 0.45).abs() < 1e-12 && p[2] == 0.0);

        let inside = project_box_budget(&[0.1, 0.2], 0.0, 1.0, 1.0, false);
        assert_eq!(inside, vec![0.1, 0.2]);

        let eq = project_box_budget(&[0.1, 0.2], 0.0, 1.0, 1.0, true);
        assert!((eq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
