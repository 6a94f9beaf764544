//! Tridiagonal solvers for the one-dimensional operators.

use alloc::vec::Vec;

/// Solve `A x = d` for tridiagonal `A` with sub-diagonal `a` (`a[0]` unused),
/// diagonal `b` and super-diagonal `c` (`c[n-1]` unused).
pub(crate) fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut cp = alloc::vec![0.0; n];
    let mut dp = alloc::vec![0.0; n];
    let mut denom = b[0];
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    cp[0] = if n > 1 { c[0] / denom } else { 0.0 };
    dp[0] = d[0] / denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        cp[i] = if i + 1 < n { c[i] / denom } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Some(x)
}

/// Solve a cyclic tridiagonal system where `a[0]` couples row 0 to node
/// `n-1` and `c[n-1]` couples row `n-1` to node 0 (Sherman–Morrison).
pub(crate) fn cyclic(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    if n < 3 {
        return thomas(a, b, c, d);
    }
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = thomas(a, &bb, c, d)?;
    let mut u = alloc::vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(a, &bb, c, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    if !fact.is_finite() {
        return None;
    }
    Some(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(a: &[f64], b: &[f64], c: &[f64], x: &[f64], periodic: bool) -> Vec<f64> {
        let n = b.len();
        (0..n)
            .map(|i| {
                let mut v = b[i] * x[i];
                if i > 0 {
                    v += a[i] * x[i - 1];
                } else if periodic {
                    v += a[0] * x[n - 1];
                }
                if i + 1 < n {
                    v += c[i] * x[i + 1];
                } else if periodic {
                    v += c[n - 1] * x[0];
                }
                v
            })
            .collect()
    }

    #[test]
    fn thomas_roundtrip() {
        let n = 12;
        let a: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| -0.5 + 0.01 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 4.0 + (i % 3) as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let d = apply(&a, &b, &c, &x, false);
        let y = thomas(&a, &b, &c, &d).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn cyclic_roundtrip() {
        let n = 10;
        let a: Vec<f64> = (0..n).map(|i| -1.0 - 0.05 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| -1.2 + 0.02 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 3.0 + 0.3 * i as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| 1.0 + (0.7 * i as f64).cos()).collect();
        let d = apply(&a, &b, &c, &x, true);
        let y = cyclic(&a, &b, &c, &d).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
