//! Closed-form dynamics of the 3-DoF spring-damper pendulum and its
//! fixed-step integrator.
//!
//! The pendulum bob sits at `l_b * R_y(theta_y) * R_x(theta_x) * e_z` and is
//! tied to the measured orientation `theta_m` by a diagonal spring `K` and a
//! diagonal damper `B`. The equation of motion is
//!
//! ```text
//! M(theta) * theta_ddot + H(theta, theta_dot) + G(theta) = tau
//! ```
//!
//! `H` collects the Coriolis/centrifugal terms together with the spring and
//! damper forces. Gravity stabilizes the upright pose (`G = +m g l_b sin ..`).
//!
//! All length terms carry the `l_b` scale so that `l` is a distance in
//! metres; with `l_b = 1` they reduce to the dimensionless forms.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{PsmError, Result};

/// Angular state of the safety pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: Vector3<f64>,
    pub theta_dot: Vector3<f64>,
    pub t: f64,
}

impl PendulumState {
    pub fn new(theta: Vector3<f64>, theta_dot: Vector3<f64>, t: f64) -> Self {
        Self {
            theta,
            theta_dot,
            t,
        }
    }

    pub fn at_rest(t: f64) -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), t)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.theta.iter().all(|v| v.is_finite())
            && self.theta_dot.iter().all(|v| v.is_finite())
    }

    /// `|theta_x|, |theta_y| < pi/2`.
    pub fn in_workspace(&self) -> bool {
        self.theta.x.abs() < FRAC_PI_2 && self.theta.y.abs() < FRAC_PI_2
    }
}

/// Physical constants of the subject and the sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyParams {
    /// Upper-body mass `m_b` (kg).
    pub mass: f64,
    /// Waist-to-chest length `l_b` (m).
    pub length: f64,
    /// Torso radius `r_b` (m).
    pub radius: f64,
    /// Principal inertia `J_b` (kg m^2).
    pub inertia: Vector3<f64>,
    /// Baseline stiffness `K_c` (N m / rad).
    pub stiffness: Vector3<f64>,
    /// Baseline damping `B_c` (N m s / rad).
    pub damping: Vector3<f64>,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Sampling period `T` (s).
    pub period: f64,
    /// Scalar inertia `J_bs` of the reduced 1-DoF pendulum (kg m^2).
    pub reduced_inertia: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self::from_geometry(
            20.0,
            0.2,
            0.25,
            Vector3::new(500.0, 500.0, 1200.0),
            Vector3::new(40.0, 40.0, 60.0),
            9.8,
            0.01,
            0.4,
        )
    }
}

impl BodyParams {
    /// Builds parameters with the torso modelled as a solid cylinder.
    #[allow(clippy::too_many_arguments)]
    pub fn from_geometry(
        mass: f64,
        length: f64,
        radius: f64,
        stiffness: Vector3<f64>,
        damping: Vector3<f64>,
        gravity: f64,
        period: f64,
        reduced_inertia: f64,
    ) -> Self {
        Self {
            mass,
            length,
            radius,
            inertia: cylinder_inertia(mass, length, radius),
            stiffness,
            damping,
            gravity,
            period,
            reduced_inertia,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("mass", self.mass),
            ("length", self.length),
            ("radius", self.radius),
            ("gravity", self.gravity),
            ("period", self.period),
            ("reduced_inertia", self.reduced_inertia),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v > 0.0) {
                return Err(PsmError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.period > 1.0 {
            return Err(PsmError::InvalidParams(format!(
                "period must lie in (0, 1], got {}",
                self.period
            )));
        }
        let vectors = [
            ("inertia", &self.inertia),
            ("stiffness", &self.stiffness),
            ("damping", &self.damping),
        ];
        for (name, v) in vectors {
            if !v.iter().all(|c| c.is_finite() && *c > 0.0) {
                return Err(PsmError::InvalidParams(format!(
                    "{name} components must be finite and > 0, got {v:?}"
                )));
            }
        }
        Ok(())
    }

    /// True when `inertia` was set directly and disagrees with the cylinder
    /// formulas for the configured mass and geometry.
    pub fn inertia_overridden(&self) -> bool {
        let expected = cylinder_inertia(self.mass, self.length, self.radius);
        (self.inertia - expected).amax() > 1e-9 * expected.amax()
    }
}

/// `J_x = J_y = m (3 r^2 + l^2) / 12`, `J_z = m r^2 / 2`.
pub fn cylinder_inertia(mass: f64, length: f64, radius: f64) -> Vector3<f64> {
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    Vector3::new(transverse, transverse, 0.5 * mass * radius * radius)
}

/// Distance of the pendulum bob from the vertical axis and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthTerms {
    /// `l` (m).
    pub l: f64,
    /// `dl/dt` (m/s).
    pub l_dot: f64,
    /// `dl/dtheta_x` (m/rad).
    pub dl_dx: f64,
    /// `dl/dtheta_y` (m/rad).
    pub dl_dy: f64,
    /// Set at the upright pose where the derivatives are 0/0 and reported as 0.
    pub degenerate: bool,
}

const DEGENERATE_RATIO: f64 = 1e-12;

pub fn length_terms(theta: &Vector3<f64>, theta_dot: &Vector3<f64>, length: f64) -> LengthTerms {
    let (sx, cx) = theta.x.sin_cos();
    let (sy, cy) = theta.y.sin_cos();
    // sqrt(sin^2(y) cos^2(x) + sin^2(x)); the equivalent sqrt(1 - cos^2 x cos^2 y)
    // cancels catastrophically near upright.
    let ratio = (sy * sy * cx * cx + sx * sx).sqrt();
    if ratio < DEGENERATE_RATIO {
        return LengthTerms {
            l: length * ratio,
            l_dot: 0.0,
            dl_dx: 0.0,
            dl_dy: 0.0,
            degenerate: true,
        };
    }
    let dl_dx = length * sx * cx * cy * cy / ratio;
    let dl_dy = length * sy * cy * cx * cx / ratio;
    LengthTerms {
        l: length * ratio,
        l_dot: dl_dx * theta_dot.x + dl_dy * theta_dot.y,
        dl_dx,
        dl_dy,
        degenerate: false,
    }
}

pub fn mass_matrix(theta: &Vector3<f64>, params: &BodyParams) -> Matrix3<f64> {
    let lt = length_terms(theta, &Vector3::zeros(), params.length);
    mass_matrix_with(theta, params, lt.l)
}

fn mass_matrix_with(theta: &Vector3<f64>, params: &BodyParams, l: f64) -> Matrix3<f64> {
    let m = params.mass;
    let lb = params.length;
    let j = &params.inertia;
    let (sx, cx) = theta.x.sin_cos();
    let (sy, cy) = theta.y.sin_cos();

    let m11 = m * lb * lb + j.x;
    let m22 = m * lb * lb * cx * cx + j.y;
    let m33 = m * l * l + j.z;
    let m13 = -m * lb * l * cy * sx;
    let m23 = -m * lb * l * sy * cx;
    Matrix3::new(
        m11, 0.0, m13, //
        0.0, m22, m23, //
        m13, m23, m33,
    )
}

/// Coriolis/centrifugal, spring and damper terms.
#[allow(clippy::too_many_arguments)]
pub fn bias_vector(
    theta: &Vector3<f64>,
    theta_dot: &Vector3<f64>,
    theta_m: &Vector3<f64>,
    theta_dot_m: &Vector3<f64>,
    stiffness: &Vector3<f64>,
    damping: &Vector3<f64>,
    params: &BodyParams,
) -> (Vector3<f64>, LengthTerms) {
    let lt = length_terms(theta, theta_dot, params.length);
    let h = bias_with(theta, theta_dot, theta_m, theta_dot_m, stiffness, damping, params, &lt);
    (h, lt)
}

#[allow(clippy::too_many_arguments)]
fn bias_with(
    theta: &Vector3<f64>,
    theta_dot: &Vector3<f64>,
    theta_m: &Vector3<f64>,
    theta_dot_m: &Vector3<f64>,
    stiffness: &Vector3<f64>,
    damping: &Vector3<f64>,
    params: &BodyParams,
    lt: &LengthTerms,
) -> Vector3<f64> {
    let m = params.mass;
    let lb = params.length;
    let (sx, cx) = theta.x.sin_cos();
    let (sy, cy) = theta.y.sin_cos();
    let (wx, wy, wz) = (theta_dot.x, theta_dot.y, theta_dot.z);
    let LengthTerms {
        l,
        l_dot,
        dl_dx,
        dl_dy,
        ..
    } = *lt;

    let spring = stiffness.component_mul(&(theta - theta_m));
    let damper = damping.component_mul(&(theta_dot - theta_dot_m));

    // Shared pieces of the x/y rows.
    let cy_sx = cy * sx;
    let sy_cx = sy * cx;
    let cross = wx * wz * cy_sx + wy * wz * sy_cx;

    let h1 = m * lb * lb * wy * wy * sx * cx
        + m * (-lb * l_dot * wz * cy_sx - (l * dl_dx * wz * wz - lb * dl_dx * cross));
    let h2 = -m * lb * lb * wx * wy * (2.0 * theta.x).sin()
        + m * (-lb * l_dot * wz * sy_cx - (l * dl_dy * wz * wz - lb * dl_dy * cross));
    let h3 = 2.0 * m * l * l_dot * wz - m * lb * l * (wx * wx + wy * wy) * cx * cy
        + 2.0 * m * lb * l * wx * wy * sx * sy
        - m * lb * l_dot * (wx * cy_sx + wy * sy_cx);

    Vector3::new(h1, h2, h3) + spring + damper
}

pub fn gravity_vector(theta: &Vector3<f64>, params: &BodyParams) -> Vector3<f64> {
    let k = params.mass * params.length * params.gravity;
    let (sx, cx) = theta.x.sin_cos();
    let (sy, cy) = theta.y.sin_cos();
    Vector3::new(k * sx * cy, k * cx * sy, 0.0)
}

/// Everything needed to evaluate the equation of motion at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynTerms {
    pub mass: Matrix3<f64>,
    pub bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub length: LengthTerms,
}

impl DynTerms {
    pub fn evaluate(state: &PendulumState, inputs: &DriveInputs, params: &BodyParams) -> Self {
        let lt = length_terms(&state.theta, &state.theta_dot, params.length);
        Self {
            mass: mass_matrix_with(&state.theta, params, lt.l),
            bias: bias_with(
                &state.theta,
                &state.theta_dot,
                &inputs.theta_m,
                &inputs.theta_dot_m,
                &inputs.stiffness,
                &inputs.damping,
                params,
                &lt,
            ),
            gravity: gravity_vector(&state.theta, params),
            length: lt,
        }
    }

    /// Solves `M a = tau - H - G` by Cholesky factorization.
    pub fn acceleration(&self, torque: &Vector3<f64>, theta: &Vector3<f64>) -> Result<Vector3<f64>> {
        let chol = self.mass.cholesky().ok_or(PsmError::SingularMass {
            theta: [theta.x, theta.y, theta.z],
        })?;
        Ok(chol.solve(&(torque - self.bias - self.gravity)))
    }
}

/// Inputs held constant across one integration period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveInputs {
    pub theta_m: Vector3<f64>,
    pub theta_dot_m: Vector3<f64>,
    pub stiffness: Vector3<f64>,
    pub damping: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl DriveInputs {
    /// No spring, no damper, no torque.
    pub fn free() -> Self {
        Self {
            theta_m: Vector3::zeros(),
            theta_dot_m: Vector3::zeros(),
            stiffness: Vector3::zeros(),
            damping: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }
}

pub fn acceleration(state: &PendulumState, inputs: &DriveInputs, params: &BodyParams) -> Result<Vector3<f64>> {
    DynTerms::evaluate(state, inputs, params).acceleration(&inputs.torque, &state.theta)
}

/// Bounds past which the integrated state is treated as diverged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceLimits {
    pub max_angle: f64,
    pub max_rate: f64,
}

impl Default for DivergenceLimits {
    fn default() -> Self {
        Self {
            max_angle: PI,
            max_rate: 50.0,
        }
    }
}

/// Classical RK4 over one sampling period with zero-order-hold inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrator {
    pub params: BodyParams,
    pub limits: DivergenceLimits,
    /// RK4 sub-steps per period; 1 means a single step of length `T`.
    pub substeps: u32,
}

impl Integrator {
    pub fn new(params: BodyParams) -> Self {
        Self {
            params,
            limits: DivergenceLimits::default(),
            substeps: 1,
        }
    }

    pub fn with_substeps(mut self, substeps: u32) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn with_limits(mut self, limits: DivergenceLimits) -> Self {
        self.limits = limits;
        self
    }

    /// Internal step length `T / substeps`.
    pub fn step_length(&self) -> f64 {
        self.params.period / f64::from(self.substeps.max(1))
    }

    pub fn step(&self, state: &PendulumState, inputs: &DriveInputs) -> Result<PendulumState> {
        let h = self.step_length();
        let mut s = *state;
        for _ in 0..self.substeps.max(1) {
            s = rk4(&s, inputs, &self.params, h)?;
        }
        // Avoid accumulating sub-step rounding in the clock.
        s.t = state.t + self.params.period;
        self.check(&s)?;
        Ok(s)
    }

    fn check(&self, s: &PendulumState) -> Result<()> {
        if !s.is_finite() {
            return Err(PsmError::StateDiverged {
                t: s.t,
                reason: "non-finite state".into(),
            });
        }
        if let Some(a) = s.theta.iter().find(|v| v.abs() > self.limits.max_angle) {
            return Err(PsmError::StateDiverged {
                t: s.t,
                reason: format!("|theta| = {} exceeds {}", a.abs(), self.limits.max_angle),
            });
        }
        if let Some(w) = s.theta_dot.iter().find(|v| v.abs() > self.limits.max_rate) {
            return Err(PsmError::StateDiverged {
                t: s.t,
                reason: format!("|theta_dot| = {} exceeds {}", w.abs(), self.limits.max_rate),
            });
        }
        if !s.in_workspace() {
            return Err(PsmError::OutOfWorkspace {
                t: s.t,
                theta: [s.theta.x, s.theta.y, s.theta.z],
            });
        }
        Ok(())
    }
}

/// One period with default divergence limits and no sub-stepping.
pub fn integrate_step(state: &PendulumState, inputs: &DriveInputs, params: &BodyParams) -> Result<PendulumState> {
    Integrator::new(params.clone()).step(state, inputs)
}

fn rk4(s: &PendulumState, inputs: &DriveInputs, params: &BodyParams, h: f64) -> Result<PendulumState> {
    let deriv = |theta: Vector3<f64>, theta_dot: Vector3<f64>| -> Result<(Vector3<f64>, Vector3<f64>)> {
        let probe = PendulumState::new(theta, theta_dot, s.t);
        Ok((theta_dot, acceleration(&probe, inputs, params)?))
    };
    let (k1q, k1v) = deriv(s.theta, s.theta_dot)?;
    let (k2q, k2v) = deriv(s.theta + k1q * (0.5 * h), s.theta_dot + k1v * (0.5 * h))?;
    let (k3q, k3v) = deriv(s.theta + k2q * (0.5 * h), s.theta_dot + k2v * (0.5 * h))?;
    let (k4q, k4v) = deriv(s.theta + k3q * h, s.theta_dot + k3v * h)?;
    let sixth = h / 6.0;
    Ok(PendulumState::new(
        s.theta + (k1q + 2.0 * k2q + 2.0 * k3q + k4q) * sixth,
        s.theta_dot + (k1v + 2.0 * k2v + 2.0 * k3v + k4v) * sixth,
        s.t + h,
    ))
}

/// Kinetic energy of the pendulum.
pub fn kinetic_energy(state: &PendulumState, params: &BodyParams) -> f64 {
    let m = mass_matrix(&state.theta, params);
    0.5 * state.theta_dot.dot(&(m * state.theta_dot))
}

/// Gravitational potential, zero-referenced so that upright is the minimum.
pub fn gravity_potential(theta: &Vector3<f64>, params: &BodyParams) -> f64 {
    -params.mass * params.gravity * params.length * theta.x.cos() * theta.y.cos()
}

pub fn mechanical_energy(state: &PendulumState, params: &BodyParams) -> f64 {
    kinetic_energy(state, params) + gravity_potential(&state.theta, params)
}
