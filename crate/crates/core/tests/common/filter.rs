//! Sinusoid gains of the zero-phase filter against the closed-form
//! Butterworth response.

use std::f64::consts::PI;

use psm::signal::{FilterSpec, ZeroPhaseLowpass};

/// Net forward-backward gain `1 / (1 + (tan(w/2) / tan(wc/2))^(2n))` of a
/// bilinear Butterworth with `n` poles per pass, at `ratio` of Nyquist.
pub fn analytic_gain(spec: &FilterSpec, ratio: f64) -> f64 {
    let r = (PI * ratio / 2.0).tan() / (PI * spec.cutoff / 2.0).tan();
    1.0 / (1.0 + r.powi(2 * spec.pass_order() as i32))
}

/// Amplitude of the filtered unit sinusoid, projected over the middle half
/// of a 4000-sample record (an integer number of periods for the ratios
/// used here).
pub fn sinusoid_gain(spec: &FilterSpec, ratio: f64) -> f64 {
    let zp = ZeroPhaseLowpass::new(*spec).unwrap();
    let w = PI * ratio;
    let x: Vec<f64> = (0..4000).map(|k| (w * k as f64).sin()).collect();
    let y = zp.filter(&x).unwrap();
    let (mut s, mut c) = (0.0, 0.0);
    for k in 1000..3000 {
        s += y[k] * (w * k as f64).sin();
        c += y[k] * (w * k as f64).cos();
    }
    2.0 * s.hypot(c) / 2000.0
}
