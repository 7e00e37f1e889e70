//! Adam optimizer with default coefficients and bias correction.

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update. `step` is the 1-based count of updates applied to this
/// parameter, including this one; moments are updated in place.
pub fn adam_step(
    value: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) {
    assert_eq!(value.len(), grad.len(), "adam_step: shape mismatch");
    assert_eq!(value.len(), m.len(), "adam_step: moment shape mismatch");
    assert_eq!(value.len(), v.len(), "adam_step: moment shape mismatch");
    assert!(step >= 1, "adam_step: step counter must be 1-based");

    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..value.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}
