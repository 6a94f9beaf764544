//! Cubic Hermite interpolation on sorted knots.

#[allow(unused_imports)]
use num_traits::Float;

/// Evaluate the piecewise cubic Hermite interpolant through `(knots, values)`
/// with prescribed `slopes`. With `period = Some(p)` the last interval wraps
/// back to the first knot shifted by `p`.
pub(crate) fn hermite(
    knots: &[f64],
    values: &[f64],
    slopes: &[f64],
    period: Option<f64>,
    at: f64,
) -> f64 {
    let n = knots.len();
    let (x, lo, hi, x_lo, x_hi) = match period {
        Some(p) => {
            let r = (at - knots[0]) - p * ((at - knots[0]) / p).floor();
            let x = knots[0] + if r >= p { 0.0 } else { r };
            let i = knots.partition_point(|&k| k <= x).saturating_sub(1);
            let (j, x_hi) = if i + 1 < n {
                (i + 1, knots[i + 1])
            } else {
                (0, knots[0] + p)
            };
            (x, i, j, knots[i], x_hi)
        }
        None => {
            let x = at.clamp(knots[0], knots[n - 1]);
            let i = knots.partition_point(|&k| k <= x).saturating_sub(1).min(n - 2);
            (x, i, i + 1, knots[i], knots[i + 1])
        }
    };
    let w = x_hi - x_lo;
    let t = (x - x_lo) / w;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * values[lo] + h10 * w * slopes[lo] + h01 * values[hi] + h11 * w * slopes[hi]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let knots = [0.0, 0.3, 0.5, 1.2, 2.0];
        let f = |x: f64| x * x * x - 2.0 * x + 1.0;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let v: [f64; 5] = core::array::from_fn(|i| f(knots[i]));
        let d: [f64; 5] = core::array::from_fn(|i| df(knots[i]));
        for &x in &[0.0, 0.1, 0.45, 0.9, 1.99, 2.0] {
            assert!((hermite(&knots, &v, &d, None, x) - f(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_wrap() {
        let knots = [0.0, 0.25, 0.5, 0.75];
        let v = [1.0, 2.0, 3.0, 4.0];
        let d = [0.0; 4];
        assert!((hermite(&knots, &v, &d, Some(1.0), 1.0) - 1.0).abs() < 1e-15);
        assert!((hermite(&knots, &v, &d, Some(1.0), 0.875) - 2.5).abs() < 1e-15);
        assert!((hermite(&knots, &v, &d, Some(1.0), -0.75) - 2.0).abs() < 1e-15);
    }
}
