//! Central finite-difference utilities for gradient verification.

/// Central-difference gradient of `f` at `x` with perturbation `h`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + h;
        let up = f(&buf);
        buf[i] = x[i] - h;
        let down = f(&buf);
        buf[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Relative error |a-b| / max(|a|, |b|, 1).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
