//! Estimation loop that drives the safety pendulum.
//!
//! Every sample is reduced to `(theta_g, omega)`, the next pair is
//! extrapolated, the safest cell of the 2x2 floor/ceil neighbourhood in the
//! probability grid is chosen, and from it the virtual stiffness `K`,
//! damping `B` and torque `tau` are estimated before the pendulum is
//! advanced one period.

use nalgebra::{SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::{bin_of, gravity_angle, omega_norm, value_of, Cell, GridSpec, SafetyDataset};
use crate::dynamics::{gravity_vector, mass_matrix, BodyParams, DriveInputs, Integrator, PendulumState};
use crate::error::{PsmError, Result};
use crate::signal::{force_direction, QUIESCENT_ACCEL};

/// How the predicted pair is extrapolated from the last two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// `prev + (cur - prev)`, which is the current sample itself.
    Printed,
    /// `cur + (cur - prev)`.
    #[default]
    OneStepAhead,
}

/// Preference among equal maxima of the 2x2 window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Slower column first, then the lower gravity angle.
    #[default]
    SlowerThenUpright,
    /// Lower gravity angle first, then the slower column.
    UprightThenSlower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Window probabilities at or below this trigger the fallback branch.
    pub epsilon_p: f64,
    /// Magnitude floor for the `theta_hat` and `omega_hat` denominators.
    pub epsilon_den: f64,
    pub mode: PredictionMode,
    pub tie_break: TieBreak,
    /// Acceleration norm below which the force direction is zero (m/s^2).
    pub quiescent_accel: f64,
    /// Upper bound on `h * B / m` and on `h * sqrt(K / m)` for the estimated
    /// gains, with `m` the smallest eigenvalue of the mass matrix and `h` the
    /// RK4 step. `None` leaves the gains uncapped.
    pub stability_margin: Option<f64>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            epsilon_p: 0.02,
            epsilon_den: 1e-3,
            mode: PredictionMode::OneStepAhead,
            tie_break: TieBreak::SlowerThenUpright,
            quiescent_accel: QUIESCENT_ACCEL,
            stability_margin: Some(1.2),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon_p) {
            return Err(PsmError::InvalidParams(format!("epsilon_p must lie in [0, 1), got {}", self.epsilon_p)));
        }
        if !(self.epsilon_den > 0.0) {
            return Err(PsmError::InvalidParams(format!("epsilon_den must be > 0, got {}", self.epsilon_den)));
        }
        if !(self.quiescent_accel >= 0.0) {
            return Err(PsmError::InvalidParams("quiescent_accel must be >= 0".into()));
        }
        if let Some(m) = self.stability_margin {
            if !(m > 0.0 && m.is_finite()) {
                return Err(PsmError::InvalidParams(format!("stability_margin must be > 0, got {m}")));
            }
        }
        Ok(())
    }
}

/// A point in the reduced `(theta_g, omega)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta_g: f64,
    pub omega: f64,
}

impl GridPoint {
    pub fn new(theta_g: f64, omega: f64) -> Self {
        Self { theta_g, omega }
    }

    fn clipped(self, spec: &GridSpec) -> Self {
        Self::new(spec.clip_theta(self.theta_g), spec.clip_omega(self.omega))
    }
}

/// Per-stream memory carried between steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictorState {
    /// `(theta_g, omega)` of the previous sample.
    pub prev: Option<GridPoint>,
    /// Safe pair chosen at the previous step.
    pub prev_safe: Option<GridPoint>,
    /// Probability attached to `prev_safe`.
    pub prev_safe_prob: f64,
}

/// Predicted pair and the increments used to form it.
pub fn predict_pair(state: &PredictorState, current: GridPoint, mode: PredictionMode) -> (GridPoint, GridPoint) {
    let Some(prev) = state.prev else {
        return (current, GridPoint::default());
    };
    let delta = GridPoint::new(current.theta_g - prev.theta_g, current.omega - prev.omega);
    let predicted = match mode {
        PredictionMode::Printed => GridPoint::new(prev.theta_g + delta.theta_g, prev.omega + delta.omega),
        PredictionMode::OneStepAhead => GridPoint::new(current.theta_g + delta.theta_g, current.omega + delta.omega),
    };
    (predicted, delta)
}

/// Probability of the predicted pair: ceil on an axis whose increment is
/// positive, floor otherwise. Returns the cell and whether it was clamped.
pub fn predicted_probability(dataset: &SafetyDataset, predicted: GridPoint, delta: GridPoint) -> (f64, Cell, bool) {
    let spec = &dataset.spec;
    let row = spec.row_coord(predicted.theta_g);
    let col = spec.col_coord(predicted.omega);
    let row = if delta.theta_g > 0.0 { row.ceil() } else { row.floor() };
    let col = if delta.omega > 0.0 { col.ceil() } else { col.floor() };
    let (n, cn) = spec.clamp_row(row);
    let (m, cm) = spec.clamp_col(col);
    let cell = Cell { n, m };
    (dataset.get(cell), cell, cn || cm)
}

/// Outcome of the 2x2 horizon search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeCandidate {
    pub prob: f64,
    pub point: GridPoint,
    /// Winning cell, absent when the fallback branch was taken.
    pub cell: Option<Cell>,
    pub fallback: bool,
    /// The window needed index clamping.
    pub clamped: bool,
    /// The four window cells, rows `(floor, ceil)` by columns `(floor, ceil)`.
    pub window: [[f64; 2]; 2],
}

/// The 2x2 window `[[P(nf, mf), P(nf, mc)], [P(nc, mf), P(nc, mc)]]` with its
/// row and column indices.
pub fn horizon_window(dataset: &SafetyDataset, predicted: GridPoint) -> ([usize; 2], [usize; 2], bool) {
    let spec = &dataset.spec;
    let row = spec.row_coord(predicted.theta_g);
    let col = spec.col_coord(predicted.omega);
    let (nf, c1) = spec.clamp_row(row.floor());
    let (nc, c2) = spec.clamp_row(row.ceil());
    let (mf, c3) = spec.clamp_col(col.floor());
    let (mc, c4) = spec.clamp_col(col.ceil());
    ([nf, nc], [mf, mc], c1 || c2 || c3 || c4)
}

pub fn safe_candidate(
    dataset: &SafetyDataset,
    predicted: GridPoint,
    delta: GridPoint,
    state: &PredictorState,
    config: &PredictorConfig,
) -> Result<SafeCandidate> {
    let (rows, cols, clamped) = horizon_window(dataset, predicted);
    let window = [
        [dataset.p[rows[0]][cols[0]], dataset.p[rows[0]][cols[1]]],
        [dataset.p[rows[1]][cols[0]], dataset.p[rows[1]][cols[1]]],
    ];
    if window.iter().flatten().all(|&p| p <= config.epsilon_p) {
        let base = state.prev_safe.unwrap_or(predicted);
        let point = GridPoint::new(base.theta_g + delta.theta_g, base.omega + delta.omega);
        return Ok(SafeCandidate {
            prob: state.prev_safe_prob,
            point,
            cell: None,
            fallback: true,
            clamped,
            window,
        });
    }
    // (row, col) visiting order encodes the tie-break: the first maximum wins.
    let order: [(usize, usize); 4] = match config.tie_break {
        TieBreak::SlowerThenUpright => [(0, 0), (1, 0), (0, 1), (1, 1)],
        TieBreak::UprightThenSlower => [(0, 0), (0, 1), (1, 0), (1, 1)],
    };
    let (mut best_i, mut best_j) = order[0];
    for &(i, j) in &order[1..] {
        if window[i][j] > window[best_i][best_j] {
            (best_i, best_j) = (i, j);
        }
    }
    let cell = Cell {
        n: rows[best_i],
        m: cols[best_j],
    };
    let (theta_g, omega) = value_of(cell.n, cell.m, &dataset.spec)?;
    Ok(SafeCandidate {
        prob: window[best_i][best_j],
        point: GridPoint::new(theta_g, omega),
        cell: Some(cell),
        fallback: false,
        clamped,
        window,
    })
}

/// `theta_hat = theta_pred - (theta_cur - theta_safe)`, same for `omega`.
pub fn estimate_targets(current: GridPoint, predicted: GridPoint, safe: GridPoint) -> GridPoint {
    GridPoint::new(
        predicted.theta_g - (current.theta_g - safe.theta_g),
        predicted.omega - (current.omega - safe.omega),
    )
}

/// Gravity angle that loads the reduced pendulum in [`estimate_force`]: the
/// safe candidate's.
pub fn force_gravity_angle(safe: &SafeCandidate) -> f64 {
    safe.point.theta_g
}

/// Force on the reduced 1-DoF pendulum from its angular acceleration
/// `(omega_hat - omega_safe) / T` and the gravity moment.
pub fn estimate_force(params: &BodyParams, omega_hat: f64, omega_safe: f64, theta_gs: f64) -> f64 {
    let lb = params.length;
    let inertia = params.reduced_inertia + params.mass * lb * lb;
    (inertia * (omega_hat - omega_safe) / params.period + params.mass * params.gravity * lb * theta_gs.sin()) / lb
}

/// Which guards fired while estimating the gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GainGuards {
    pub theta_den: bool,
    pub omega_den: bool,
    pub stiffness_negative: bool,
    pub damping_negative: bool,
    pub stiffness_saturated: bool,
    pub damping_saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub stiffness: Vector3<f64>,
    pub damping: Vector3<f64>,
    /// Scalar additions `k_s`, `b_s` after guards.
    pub k_add: f64,
    pub b_add: f64,
    pub guards: GainGuards,
}

/// Largest scalar additions to `K_c`, `B_c` that keep the linearized
/// pendulum inside the RK4 stability region for step `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainLimit {
    pub k_add_max: f64,
    pub b_add_max: f64,
}

impl GainLimit {
    pub fn unbounded() -> Self {
        Self {
            k_add_max: f64::INFINITY,
            b_add_max: f64::INFINITY,
        }
    }

    pub fn for_state(theta: &Vector3<f64>, params: &BodyParams, h: f64, margin: f64) -> Self {
        let eig = SymmetricEigen::new(mass_matrix(theta, params)).eigenvalues;
        let m_eff = eig.min();
        let rate = margin / h;
        Self {
            k_add_max: (rate * rate * m_eff - params.stiffness.max()).max(0.0),
            b_add_max: (rate * m_eff - params.damping.max()).max(0.0),
        }
    }
}

fn floor_magnitude(x: f64, eps: f64) -> (f64, bool) {
    if x.abs() >= eps {
        (x, false)
    } else if x < 0.0 {
        (-eps, true)
    } else {
        (eps, true)
    }
}

/// `k_s = F / theta_hat / (1 - P)^2`, `b_s = 2 F / omega_hat / (1 - P)^3`,
/// guarded, clamped to `[0, limit]` and added to the baseline gains.
pub fn estimate_gains(
    f_hat: f64,
    target: GridPoint,
    p_k: f64,
    params: &BodyParams,
    config: &PredictorConfig,
    limit: &GainLimit,
) -> Gains {
    let mut guards = GainGuards::default();
    let (theta_den, g1) = floor_magnitude(target.theta_g, config.epsilon_den);
    let (omega_den, g2) = floor_magnitude(target.omega, config.epsilon_den);
    guards.theta_den = g1;
    guards.omega_den = g2;

    let q = 1.0 - p_k;
    let k_raw = f_hat / theta_den / (q * q);
    let b_raw = f_hat / omega_den * 2.0 / (q * q * q);

    let clamp = |raw: f64, max: f64, negative: &mut bool, saturated: &mut bool| {
        if raw < 0.0 {
            *negative = true;
            0.0
        } else if raw > max {
            *saturated = true;
            max
        } else {
            raw
        }
    };
    let k_add = clamp(k_raw, limit.k_add_max, &mut guards.stiffness_negative, &mut guards.stiffness_saturated);
    let b_add = clamp(b_raw, limit.b_add_max, &mut guards.damping_negative, &mut guards.damping_saturated);

    Gains {
        stiffness: params.stiffness.add_scalar(k_add),
        damping: params.damping.add_scalar(b_add),
        k_add,
        b_add,
        guards,
    }
}

/// `tau = (l_b F_m + G(theta_m)) + [(l_b F_m + G(theta_m)) - l_b F_hat tan(phi)]`.
pub fn estimate_torque(
    force: &Vector3<f64>,
    theta_m: &Vector3<f64>,
    f_hat: f64,
    phi: &Vector3<f64>,
    params: &BodyParams,
) -> Vector3<f64> {
    let lb = params.length;
    let base = force * lb + gravity_vector(theta_m, params);
    let correction = phi.map(f64::tan) * (lb * f_hat);
    base + (base - correction)
}

/// Preprocessed sample handed to [`run_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    pub t: f64,
    pub theta_m: Vector3<f64>,
    pub theta_dot_m: Vector3<f64>,
    /// Gravity-compensated world-frame acceleration; `None` until calibrated.
    pub a_mg: Option<Vector3<f64>>,
}

/// Guard flags raised anywhere in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepGuards {
    pub omega_clipped: bool,
    pub bin_clamped: bool,
    pub predicted_clamped: bool,
    pub window_clamped: bool,
    pub quiescent: bool,
    pub not_calibrated: bool,
    #[serde(flatten)]
    pub gains: GainGuards,
}

impl StepGuards {
    /// Range clipping and index clamping only.
    pub fn any_range(&self) -> bool {
        self.omega_clipped || self.bin_clamped || self.predicted_clamped || self.window_clamped
    }

    pub fn any(&self) -> bool {
        let g = &self.gains;
        self.any_range()
            || self.quiescent
            || self.not_calibrated
            || g.theta_den
            || g.omega_den
            || g.stiffness_negative
            || g.damping_negative
            || g.stiffness_saturated
            || g.damping_saturated
    }
}

/// Every intermediate of one estimation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedVars {
    pub current: GridPoint,
    pub p_k: f64,
    pub delta: GridPoint,
    pub predicted: GridPoint,
    pub predicted_prob: f64,
    pub safe: SafeCandidate,
    pub target: GridPoint,
    pub f_hat: f64,
    pub gains: Gains,
    pub force: Vector3<f64>,
    pub phi: Vector3<f64>,
    pub tau_hat: Vector3<f64>,
}

/// Raw deviation norms between the model and the measurement at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// `|theta - theta_m|`.
    pub theta: f64,
    /// `|theta_dot - theta_dot_m|`.
    pub omega: f64,
}

impl Deviation {
    pub fn between(model: &PendulumState, theta_m: &Vector3<f64>, theta_dot_m: &Vector3<f64>) -> Self {
        Self {
            theta: (model.theta - theta_m).norm(),
            omega: (model.theta_dot - theta_dot_m).norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// Model state advanced one period past the sample.
    pub pendulum: PendulumState,
    pub predictor: PredictorState,
    pub vars: EstimatedVars,
    pub guards: StepGuards,
    /// Model state at the sample time against the measurement.
    pub deviation: Deviation,
}

/// One pass of the estimation loop for a single sample.
///
/// `pendulum` must already be at the sample time; the returned state is one
/// period later. Pure: identical arguments give bit-identical results.
pub fn run_step(
    pendulum: &PendulumState,
    state: &PredictorState,
    dataset: &SafetyDataset,
    input: &StepInput,
    integrator: &Integrator,
    config: &PredictorConfig,
) -> Result<StepOutput> {
    let params = &integrator.params;
    let spec = &dataset.spec;
    let mut guards = StepGuards::default();

    let deviation = Deviation::between(pendulum, &input.theta_m, &input.theta_dot_m);

    let theta_g = gravity_angle(input.theta_m.x, input.theta_m.y, params.length);
    let (omega, clipped) = omega_norm(&input.theta_dot_m, spec.omega_max);
    guards.omega_clipped = clipped;
    let current = GridPoint::new(theta_g, omega);
    let (cell, clamped) = bin_of(theta_g, omega, spec);
    guards.bin_clamped = clamped;
    let p_k = dataset.get(cell);

    let (predicted, delta) = predict_pair(state, current, config.mode);
    let (predicted_prob, _, pclamp) = predicted_probability(dataset, predicted, delta);
    guards.predicted_clamped = pclamp;

    let safe = safe_candidate(dataset, predicted, delta, state, config)?;
    guards.window_clamped = safe.clamped;

    let target = estimate_targets(current, predicted, safe.point);
    let f_hat = estimate_force(params, target.omega, safe.point.omega, force_gravity_angle(&safe));

    let limit = match config.stability_margin {
        Some(margin) => GainLimit::for_state(&pendulum.theta, params, integrator.step_length(), margin),
        None => GainLimit::unbounded(),
    };
    let gains = estimate_gains(f_hat, target, p_k, params, config, &limit);
    guards.gains = gains.guards;

    let (force, phi) = match input.a_mg {
        Some(a) => {
            let (phi, quiescent) = force_direction(&a, config.quiescent_accel);
            guards.quiescent = quiescent;
            (a * params.mass, phi)
        }
        None => {
            guards.not_calibrated = true;
            (Vector3::zeros(), Vector3::zeros())
        }
    };
    let tau_hat = estimate_torque(&force, &input.theta_m, f_hat, &phi, params);

    let drive = DriveInputs {
        theta_m: input.theta_m,
        theta_dot_m: input.theta_dot_m,
        stiffness: gains.stiffness,
        damping: gains.damping,
        torque: tau_hat,
    };
    let next = integrator.step(pendulum, &drive)?;

    let predictor = PredictorState {
        prev: Some(current),
        prev_safe: Some(safe.point.clipped(spec)),
        prev_safe_prob: safe.prob,
    };
    // First sample: the fallback pair has no history to keep a probability
    // from, so it carries the current cell's.
    let predictor = if state.prev_safe.is_none() && safe.fallback {
        PredictorState {
            prev_safe_prob: p_k,
            ..predictor
        }
    } else {
        predictor
    };

    Ok(StepOutput {
        pendulum: next,
        predictor,
        vars: EstimatedVars {
            current,
            p_k,
            delta,
            predicted,
            predicted_prob,
            safe,
            target,
            f_hat,
            gains,
            force,
            phi,
            tau_hat,
        },
        guards,
        deviation,
    })
}
