//! IMU preprocessing: zero-phase Butterworth smoothing of the raw
//! acceleration, gravity compensation and the direction of the exerted
//! force.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{PsmError, Result};

/// Sensor range sanity bound (16 g).
pub const MAX_ACCEL: f64 = 160.0;

/// One timestamped IMU measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Fused orientation (roll, pitch, yaw) in rad.
    pub theta_m: Vector3<f64>,
    /// Bias-free angular velocity in rad/s.
    pub theta_dot_m: Vector3<f64>,
    /// Raw acceleration in m/s^2, body frame.
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn validate(&self) -> Result<()> {
        let finite = self.t.is_finite()
            && self.theta_m.iter().all(|v| v.is_finite())
            && self.theta_dot_m.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite());
        if !finite {
            return Err(PsmError::InvalidSample(format!("non-finite field at t = {}", self.t)));
        }
        if self.accel.norm() >= MAX_ACCEL {
            return Err(PsmError::InvalidSample(format!(
                "|a_c| = {} exceeds sensor range at t = {}",
                self.accel.norm(),
                self.t
            )));
        }
        Ok(())
    }
}

/// Enforces strictly increasing timestamps within one stream.
#[derive(Debug, Default, Clone)]
pub struct StreamGuard {
    last_t: Option<f64>,
}

impl StreamGuard {
    pub fn admit(&mut self, sample: &ImuSample) -> Result<()> {
        sample.validate()?;
        if let Some(prev) = self.last_t {
            if sample.t <= prev {
                return Err(PsmError::InvalidSample(format!(
                    "timestamp {} does not increase past {prev}",
                    sample.t
                )));
            }
        }
        self.last_t = Some(sample.t);
        Ok(())
    }
}

/// Order and cut-off of the zero-phase low-pass filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    /// Net order `n_f` of the forward-backward pair; each pass has `n_f / 2`.
    pub order: u32,
    /// Cut-off as a fraction of the Nyquist frequency.
    pub cutoff: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 12,
            cutoff: 0.42,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(PsmError::InvalidParams(format!(
                "filter order must be a positive even number, got {}",
                self.order
            )));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(PsmError::InvalidParams(format!(
                "cut-off ratio must lie in (0, 1), got {}",
                self.cutoff
            )));
        }
        Ok(())
    }

    /// Shortest series accepted by [`zero_phase_lowpass`].
    pub fn min_len(&self) -> usize {
        3 * self.order as usize
    }

    /// Order of each of the two passes.
    pub fn pass_order(&self) -> u32 {
        self.order / 2
    }
}

/// Second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter state reached after a long run of unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> (f64, f64) {
        let (s1, c1) = w.sin_cos();
        let (s2, c2) = (2.0 * w).sin_cos();
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, -(self.b[1] * s1 + self.b[2] * s2));
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, -(self.a[0] * s1 + self.a[1] * s2));
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Digital Butterworth low-pass as a cascade of second-order sections,
/// designed by the bilinear transform with pre-warping.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
}

impl Butterworth {
    /// `order` poles, cut-off at `cutoff * Nyquist`.
    pub fn lowpass(order: u32, cutoff: f64) -> Result<Self> {
        if order == 0 || !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(PsmError::InvalidParams(format!(
                "butterworth order {order}, cut-off {cutoff}"
            )));
        }
        let n = order as usize;
        let warped = (PI * cutoff / 2.0).tan();
        let mut sections = Vec::with_capacity(n.div_ceil(2));
        for k in 0..n / 2 {
            // Analog pole in the upper-left quadrant; its conjugate is implied.
            let angle = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let (re, im) = (warped * angle.cos(), warped * angle.sin());
            // z = (1 + s) / (1 - s)
            let den = (1.0 - re) * (1.0 - re) + im * im;
            let zr = (1.0 - re * re - im * im) / den;
            let zi = 2.0 * im / den;
            let a1 = -2.0 * zr;
            let a2 = zr * zr + zi * zi;
            let gain = (1.0 + a1 + a2) / 4.0;
            sections.push(Biquad {
                b: [gain, 2.0 * gain, gain],
                a: [a1, a2],
            });
        }
        if n % 2 == 1 {
            let p = (1.0 - warped) / (1.0 + warped);
            let gain = (1.0 - p) / 2.0;
            sections.push(Biquad {
                b: [gain, gain, 0.0],
                a: [-p, 0.0],
            });
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// `|H(e^{jw})|` of one pass.
    pub fn magnitude(&self, w: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                (re * re + im * im).sqrt()
            })
            .product()
    }

    /// Causal pass, starting from the steady state for input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let [u1, u2] = s.step_state();
            let (mut z1, mut z2) = (u1 * level, u2 * level);
            level *= s.dc_gain();
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * y + z2;
                z2 = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
        }
    }
}

/// Forward-backward Butterworth with odd reflection padding.
#[derive(Debug, Clone)]
pub struct ZeroPhaseLowpass {
    spec: FilterSpec,
    filter: Butterworth,
}

impl ZeroPhaseLowpass {
    pub fn new(spec: FilterSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            filter: Butterworth::lowpass(spec.pass_order(), spec.cutoff)?,
            spec,
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn design(&self) -> &Butterworth {
        &self.filter
    }

    fn pad_len(&self, len: usize) -> usize {
        self.spec.min_len().min(len.saturating_sub(1))
    }

    fn extend(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let n = x.len();
        let pad = self.pad_len(n);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        (ext, pad)
    }

    pub fn filter(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < self.spec.min_len() {
            return Err(PsmError::SeriesTooShort {
                len: x.len(),
                required: self.spec.min_len(),
            });
        }
        let (mut ext, pad) = self.extend(x);
        self.filter.run(&mut ext);
        ext.reverse();
        self.filter.run(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + x.len()].to_vec())
    }

    /// Last element of `filter(x)` without running the full backward pass.
    pub fn filter_last(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.spec.min_len() {
            return Err(PsmError::SeriesTooShort {
                len: x.len(),
                required: self.spec.min_len(),
            });
        }
        let (mut ext, pad) = self.extend(x);
        self.filter.run(&mut ext);
        let mut tail: Vec<f64> = ext[ext.len() - pad - 1..].iter().rev().copied().collect();
        self.filter.run(&mut tail);
        Ok(tail[pad])
    }
}

/// Zero-phase low-pass of a 3-axis series, axis by axis.
pub fn zero_phase_lowpass(series: &[Vector3<f64>], spec: &FilterSpec) -> Result<Vec<Vector3<f64>>> {
    let zp = ZeroPhaseLowpass::new(*spec)?;
    let mut axes = [Vec::new(), Vec::new(), Vec::new()];
    for (i, axis) in axes.iter_mut().enumerate() {
        let x: Vec<f64> = series.iter().map(|v| v[i]).collect();
        *axis = zp.filter(&x)?;
    }
    Ok((0..series.len())
        .map(|k| Vector3::new(axes[0][k], axes[1][k], axes[2][k]))
        .collect())
}

/// Sliding-window realization for live streams: each new sample triggers a
/// zero-phase pass over the last `window` samples and the newest filtered
/// value is emitted. Until the window holds `spec.min_len()` samples the raw
/// input is passed through.
#[derive(Debug, Clone)]
pub struct StreamingLowpass {
    zp: ZeroPhaseLowpass,
    window: usize,
    buf: [VecDeque<f64>; 3],
}

impl StreamingLowpass {
    pub fn new(spec: FilterSpec, window: usize) -> Result<Self> {
        let zp = ZeroPhaseLowpass::new(spec)?;
        if window < spec.min_len() {
            return Err(PsmError::InvalidParams(format!(
                "filter window {window} shorter than {}",
                spec.min_len()
            )));
        }
        Ok(Self {
            zp,
            window,
            buf: std::array::from_fn(|_| VecDeque::with_capacity(window)),
        })
    }

    pub fn is_warm(&self) -> bool {
        self.buf[0].len() >= self.zp.spec.min_len()
    }

    pub fn buffered(&self) -> usize {
        self.buf[0].len()
    }

    pub fn push(&mut self, a: &Vector3<f64>) -> Vector3<f64> {
        for (i, b) in self.buf.iter_mut().enumerate() {
            if b.len() == self.window {
                b.pop_front();
            }
            b.push_back(a[i]);
        }
        if !self.is_warm() {
            return *a;
        }
        let mut out = Vector3::zeros();
        for (i, b) in self.buf.iter_mut().enumerate() {
            // Length was checked above, so filtering cannot fail.
            out[i] = self.zp.filter_last(b.make_contiguous()).unwrap_or(a[i]);
        }
        out
    }
}

/// `R = R_z(yaw) R_y(pitch) R_x(roll)` for `theta_m = (roll, pitch, yaw)`.
pub fn ypr_rotation(theta_m: &Vector3<f64>) -> Matrix3<f64> {
    let (sx, cx) = theta_m.x.sin_cos();
    let (sy, cy) = theta_m.y.sin_cos();
    let (sz, cz) = theta_m.z.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

fn check_orthonormal(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).norm();
    if err < 1e-6 {
        Ok(())
    } else {
        Err(PsmError::InvalidParams(format!("rotation not orthonormal (|R'R - I| = {err:e})")))
    }
}

/// Gravity direction captured while the wearer was still.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityReference {
    /// Mean body-frame acceleration over the stillness window.
    pub accel: Vector3<f64>,
    /// Orientation at the first still sample.
    pub rotation: Matrix3<f64>,
}

/// `a_mg = R(t) a_m - R(t0) a_g`.
pub fn gravity_compensate(
    a_m: &Vector3<f64>,
    rotation: &Matrix3<f64>,
    reference: Option<&GravityReference>,
) -> Result<Vector3<f64>> {
    let reference = reference.ok_or(PsmError::NotCalibrated)?;
    check_orthonormal(rotation)?;
    check_orthonormal(&reference.rotation)?;
    Ok(rotation * a_m - reference.rotation * reference.accel)
}

/// Settings for the stillness calibration of the gravity reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSpec {
    /// Stillness needed before the reference is fixed (s).
    pub duration: f64,
    /// Gyro norm below which a sample counts as still (rad/s).
    pub gyro_threshold: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            duration: 1.0,
            gyro_threshold: 0.05,
        }
    }
}

/// Averages still samples until `duration` worth of them has been seen.
#[derive(Debug, Clone)]
pub struct Calibrator {
    spec: CalibrationSpec,
    needed: usize,
    sum: Vector3<f64>,
    count: usize,
    first_rotation: Option<Matrix3<f64>>,
    reference: Option<GravityReference>,
}

impl Calibrator {
    pub fn new(spec: CalibrationSpec, period: f64) -> Self {
        let needed = ((spec.duration / period).round() as usize).max(1);
        Self {
            spec,
            needed,
            sum: Vector3::zeros(),
            count: 0,
            first_rotation: None,
            reference: None,
        }
    }

    pub fn reference(&self) -> Option<&GravityReference> {
        self.reference.as_ref()
    }

    pub fn feed(&mut self, theta_m: &Vector3<f64>, theta_dot_m: &Vector3<f64>, a_m: &Vector3<f64>) {
        if self.reference.is_some() || theta_dot_m.norm() >= self.spec.gyro_threshold {
            return;
        }
        let rotation = *self.first_rotation.get_or_insert_with(|| ypr_rotation(theta_m));
        self.sum += a_m;
        self.count += 1;
        if self.count >= self.needed {
            self.reference = Some(GravityReference {
                accel: self.sum / self.count as f64,
                rotation,
            });
        }
    }
}

/// Below this acceleration norm the force direction is undefined (m/s^2).
pub const QUIESCENT_ACCEL: f64 = 0.05;

/// Per-axis `atan2(a_i, |a|)`; zero and flagged when `|a| < threshold`.
pub fn force_direction(a_mg: &Vector3<f64>, threshold: f64) -> (Vector3<f64>, bool) {
    let norm = a_mg.norm();
    if norm < threshold {
        return (Vector3::zeros(), true);
    }
    (a_mg.map(|a| a.atan2(norm)), false)
}
