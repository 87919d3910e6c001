//! Seeded synthetic IMU streams for tests and the `simulate` command.
//!
//! Poses follow minimum-jerk moves between waypoints; the accelerometer
//! reading is the specific force at the chest, `R^T (p'' + g e_z)`, with
//! `p = l_b R(theta_m) e_z`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::BodyParams;
use crate::error::{PsmError, Result};
use crate::signal::{ypr_rotation, ImuSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Slow,
    Medium,
    Fast,
}

/// Peak angular speed of a minimum-jerk move per profile (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpeeds {
    pub slow: f64,
    pub medium: f64,
    pub fast: f64,
}

impl Default for ProfileSpeeds {
    fn default() -> Self {
        Self {
            slow: 0.4,
            medium: 0.8,
            fast: 1.6,
        }
    }
}

impl ProfileSpeeds {
    pub fn peak(&self, profile: Profile) -> f64 {
        match profile {
            Profile::Slow => self.slow,
            Profile::Medium => self.medium,
            Profile::Fast => self.fast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Perturbation {
    #[default]
    None,
    /// Sinusoidal tremor added to every axis with a random phase per axis.
    Jitter { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// Seconds.
    pub duration: f64,
    /// Orientation reached by the end of the move (rad).
    pub target: Vector3<f64>,
    pub profile: Profile,
    #[serde(default)]
    pub perturbation: Perturbation,
    /// Ground-truth label; defaults to "unsafe iff perturbed".
    #[serde(default, rename = "unsafe", skip_serializing_if = "Option::is_none")]
    pub unsafe_label: Option<bool>,
}

impl Segment {
    pub fn is_unsafe(&self) -> bool {
        self.unsafe_label
            .unwrap_or(!matches!(self.perturbation, Perturbation::None))
    }
}

/// Standard deviations of the additive Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub theta: f64,
    pub gyro: f64,
    pub accel: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            theta: 0.002,
            gyro: 0.01,
            accel: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub seed: u64,
    /// Initial orientation (rad).
    #[serde(default = "Vector3::zeros")]
    pub start: Vector3<f64>,
    /// Still lead-in before the first segment, long enough to calibrate (s).
    #[serde(default = "default_settle")]
    pub settle: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub speeds: ProfileSpeeds,
    pub segments: Vec<Segment>,
}

fn default_settle() -> f64 {
    1.5
}

impl SyntheticScenario {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if self.segments.is_empty() {
            return Err(PsmError::InvalidParams("scenario has no segments".into()));
        }
        if !(self.settle >= 0.0) {
            return Err(PsmError::InvalidParams("settle must be >= 0".into()));
        }
        let s = &self.speeds;
        if !(s.slow > 0.0 && s.medium > 0.0 && s.fast > 0.0) {
            return Err(PsmError::InvalidParams("profile speeds must be > 0".into()));
        }
        let n = &self.noise;
        if !(n.theta >= 0.0 && n.gyro >= 0.0 && n.accel >= 0.0) {
            return Err(PsmError::InvalidParams("noise levels must be >= 0".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration > 0.0 && seg.duration.is_finite()) {
                return Err(PsmError::InvalidParams(format!("segment {i}: duration must be > 0")));
            }
            if let Perturbation::Jitter { amplitude, frequency } = seg.perturbation {
                if !(amplitude >= 0.0 && frequency > 0.0 && frequency < sample_rate / 2.0) {
                    return Err(PsmError::InvalidParams(format!(
                        "segment {i}: jitter needs amplitude >= 0 and 0 < frequency < {}",
                        sample_rate / 2.0
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.settle + self.segments.iter().map(|s| s.duration).sum::<f64>()
    }
}

/// One generated sample and its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub sample: ImuSample,
    pub unsafe_label: bool,
}

struct Piece {
    start_t: f64,
    from: Vector3<f64>,
    to: Vector3<f64>,
    move_time: f64,
    duration: f64,
    jitter: Option<(f64, f64, Vector3<f64>)>,
}

/// Jitter fades in and out over this long so the pose stays smooth (s).
const JITTER_RAMP: f64 = 0.25;

/// Noise-free pose trajectory.
struct Trajectory {
    pieces: Vec<Piece>,
    start: Vector3<f64>,
}

impl Trajectory {
    fn piece(&self, t: f64) -> Option<&Piece> {
        self.pieces.iter().rev().find(|p| t >= p.start_t)
    }

    fn pose(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let Some(p) = self.piece(t) else {
            return (self.start, Vector3::zeros());
        };
        let local = t - p.start_t;
        let (s, ds) = min_jerk(local, p.move_time);
        let mut theta = p.from + (p.to - p.from) * s;
        let mut rate = (p.to - p.from) * ds;
        if let Some((amp, freq, phase)) = p.jitter {
            let ramp = JITTER_RAMP.min(p.duration / 2.0);
            let (up, dup) = min_jerk(local, ramp);
            let (down, ddown) = min_jerk(p.duration - local, ramp);
            let env = up * down;
            let denv = dup * down - up * ddown;
            let w = 2.0 * PI * freq;
            for i in 0..3 {
                let arg = w * local + phase[i];
                theta[i] += amp * env * arg.sin();
                rate[i] += amp * (denv * arg.sin() + env * w * arg.cos());
            }
        }
        (theta, rate)
    }

    fn chest(&self, t: f64, length: f64) -> Vector3<f64> {
        ypr_rotation(&self.pose(t).0) * Vector3::new(0.0, 0.0, length)
    }
}

/// Normalized position and rate of a minimum-jerk move of duration `d`.
fn min_jerk(t: f64, d: f64) -> (f64, f64) {
    if d <= 0.0 || t >= d {
        return (1.0, 0.0);
    }
    let u = t / d;
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / d;
    (s, ds)
}

/// Samples `scenario` at `sample_rate`. Deterministic per seed.
pub fn generate_synthetic(
    scenario: &SyntheticScenario,
    params: &BodyParams,
    sample_rate: f64,
) -> Result<Vec<LabeledSample>> {
    scenario.validate(sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut pieces = Vec::with_capacity(scenario.segments.len());
    let mut labels = Vec::with_capacity(scenario.segments.len());
    let mut t0 = scenario.settle;
    let mut from = scenario.start;
    for seg in &scenario.segments {
        let distance = (seg.target - from).norm();
        // Peak rate of a minimum-jerk move is 1.875 * distance / duration.
        let move_time = (1.875 * distance / scenario.speeds.peak(seg.profile)).min(seg.duration);
        let jitter = match seg.perturbation {
            Perturbation::None => None,
            Perturbation::Jitter { amplitude, frequency } => {
                let phase = Vector3::from_fn(|_, _| rng.random::<f64>() * 2.0 * PI);
                Some((amplitude, frequency, phase))
            }
        };
        pieces.push(Piece {
            start_t: t0,
            from,
            to: seg.target,
            move_time,
            duration: seg.duration,
            jitter,
        });
        labels.push((t0, seg.is_unsafe()));
        t0 += seg.duration;
        from = seg.target;
    }
    let traj = Trajectory {
        pieces,
        start: scenario.start,
    };

    let period = 1.0 / sample_rate;
    let total = (scenario.duration() * sample_rate).round() as usize;
    let noise = &scenario.noise;
    let n_theta = Normal::new(0.0, noise.theta).map_err(|e| PsmError::InvalidParams(e.to_string()))?;
    let n_gyro = Normal::new(0.0, noise.gyro).map_err(|e| PsmError::InvalidParams(e.to_string()))?;
    let n_accel = Normal::new(0.0, noise.accel).map_err(|e| PsmError::InvalidParams(e.to_string()))?;
    let h = 1e-3;
    let gravity = Vector3::new(0.0, 0.0, params.gravity);

    let mut out = Vec::with_capacity(total);
    for k in 0..total {
        let t = k as f64 * period;
        let (theta, rate) = traj.pose(t);
        let p_ddot = (traj.chest(t + h, params.length) - 2.0 * traj.chest(t, params.length)
            + traj.chest(t - h, params.length))
            / (h * h);
        let accel = ypr_rotation(&theta).transpose() * (p_ddot + gravity);

        let mut draw = |d: &Normal<f64>| Vector3::from_fn(|_, _| d.sample(&mut rng));
        let sample = ImuSample {
            t,
            theta_m: theta + draw(&n_theta),
            theta_dot_m: rate + draw(&n_gyro),
            accel: accel + draw(&n_accel),
        };
        let unsafe_label = labels
            .iter()
            .rev()
            .find(|(start, _)| t >= *start)
            .is_some_and(|(_, u)| *u);
        out.push(LabeledSample { sample, unsafe_label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet() -> NoiseSpec {
        NoiseSpec {
            theta: 0.0,
            gyro: 0.0,
            accel: 0.0,
        }
    }

    fn one_move(profile: Profile) -> SyntheticScenario {
        SyntheticScenario {
            seed: 1,
            start: Vector3::zeros(),
            settle: 0.5,
            noise: quiet(),
            speeds: ProfileSpeeds::default(),
            segments: vec![Segment {
                duration: 4.0,
                target: Vector3::new(0.4, 0.2, 0.0),
                profile,
                perturbation: Perturbation::None,
                unsafe_label: None,
            }],
        }
    }

    fn peak_rate(s: &[LabeledSample]) -> f64 {
        s.iter().map(|x| x.sample.theta_dot_m.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn stationary_segment_reads_gravity() {
        let mut sc = one_move(Profile::Slow);
        sc.segments[0].target = Vector3::zeros();
        sc.noise = NoiseSpec::default();
        let p = BodyParams::default();
        let s = generate_synthetic(&sc, &p, 100.0).unwrap();
        assert_eq!(s.len(), 450);
        let mean = s.iter().map(|x| x.sample.accel).sum::<Vector3<f64>>() / s.len() as f64;
        assert_relative_eq!(mean, Vector3::new(0.0, 0.0, 9.8), epsilon = 0.02);
        let quiet = generate_synthetic(&SyntheticScenario { noise: quiet(), ..sc }, &p, 100.0).unwrap();
        assert!(quiet.iter().all(|x| x.sample.theta_dot_m == Vector3::zeros()));
    }

    #[test]
    fn slow_profile_peaks_below_medium() {
        let p = BodyParams::default();
        let slow = peak_rate(&generate_synthetic(&one_move(Profile::Slow), &p, 100.0).unwrap());
        let medium = peak_rate(&generate_synthetic(&one_move(Profile::Medium), &p, 100.0).unwrap());
        assert!(slow < medium);
        assert_relative_eq!(slow, 0.4, max_relative = 1e-3);
        assert_relative_eq!(medium, 0.8, max_relative = 1e-3);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut sc = one_move(Profile::Medium);
        sc.noise = NoiseSpec::default();
        sc.segments[0].perturbation = Perturbation::Jitter {
            amplitude: 0.05,
            frequency: 4.0,
        };
        let p = BodyParams::default();
        let a = generate_synthetic(&sc, &p, 100.0).unwrap();
        let b = generate_synthetic(&sc, &p, 100.0).unwrap();
        assert_eq!(a, b);
        sc.seed = 2;
        assert_ne!(a, generate_synthetic(&sc, &p, 100.0).unwrap());
    }

    #[test]
    fn rate_is_pose_derivative() {
        let sc = one_move(Profile::Medium);
        let p = BodyParams::default();
        let s = generate_synthetic(&sc, &p, 1000.0).unwrap();
        for w in s.windows(3).step_by(97) {
            let fd = (w[2].sample.theta_m - w[0].sample.theta_m) / 0.002;
            assert_relative_eq!(fd, w[1].sample.theta_dot_m, epsilon = 1e-5);
        }
    }

    #[test]
    fn labels_follow_perturbation() {
        let mut sc = one_move(Profile::Slow);
        sc.segments[0].perturbation = Perturbation::Jitter {
            amplitude: 0.02,
            frequency: 5.0,
        };
        let s = generate_synthetic(&sc, &BodyParams::default(), 100.0).unwrap();
        assert!(!s[49].unsafe_label);
        assert!(s[50].unsafe_label);
    }

    #[test]
    fn jitter_above_nyquist_rejected() {
        let mut sc = one_move(Profile::Slow);
        sc.segments[0].perturbation = Perturbation::Jitter {
            amplitude: 0.02,
            frequency: 60.0,
        };
        assert!(generate_synthetic(&sc, &BodyParams::default(), 100.0).is_err());
    }
}
