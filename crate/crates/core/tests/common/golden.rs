//! Three-step trace whose every intermediate is a short dyadic rational, so
//! the f64 pipeline must reproduce it bit for bit. Hand arithmetic lives in
//! `tests/golden_trace.md`.

use nalgebra::Vector3;
use psm::dataset::{GridSpec, SafetyDataset};
use psm::dynamics::{BodyParams, Integrator, PendulumState};
use psm::predictor::*;

pub const T: f64 = 0.75;

/// Measured yaw rate at each step.
pub const W: [f64; 3] = [7.0 / 16.0, 0.25, 1.0 / 16.0];

pub fn params() -> BodyParams {
    BodyParams {
        mass: 0.5,
        length: 0.5,
        radius: 0.1,
        inertia: Vector3::new(1.0, 1.0, 0.25),
        stiffness: Vector3::new(1.0, 1.0, 1.0),
        damping: Vector3::new(1.0, 1.0, 1.0),
        gravity: 8.0,
        period: T,
        reduced_inertia: 0.125,
    }
}

pub fn dataset() -> SafetyDataset {
    let spec = GridSpec {
        theta_g_min: 0.0,
        theta_g_max: 1.0,
        omega_max: 2.0,
        n_theta: 2,
        m_omega: 8,
    };
    let row0 = vec![0.0, 0.5, 0.75, 0.875, 0.5, 0.75, 0.5, 0.0];
    SafetyDataset::from_probabilities(spec, vec![row0, vec![0.25; 8]]).unwrap()
}

pub fn config() -> PredictorConfig {
    PredictorConfig {
        epsilon_p: 0.02,
        epsilon_den: 0.125,
        mode: PredictionMode::OneStepAhead,
        tie_break: TieBreak::SlowerThenUpright,
        stability_margin: None,
        ..Default::default()
    }
}

pub fn input(k: usize) -> StepInput {
    StepInput {
        t: k as f64 * T,
        theta_m: Vector3::zeros(),
        theta_dot_m: Vector3::new(0.0, 0.0, W[k]),
        a_mg: Some(Vector3::new(0.0, 0.0, 1.0 / 32.0)),
    }
}

/// Expected values of one step.
struct Expect {
    p_k: f64,
    delta: f64,
    predicted: f64,
    predicted_prob: f64,
    window: [f64; 2],
    safe: f64,
    safe_prob: f64,
    fallback: bool,
    omega_hat: f64,
    f_hat: f64,
    k_add: f64,
    b_add: f64,
    dev: (f64, f64),
    theta_z: f64,
    omega_z: f64,
    guards: StepGuards,
}

fn expected() -> [Expect; 3] {
    use psm::predictor::GainGuards as G;
    [
        Expect {
            p_k: 0.75,
            delta: 0.0,
            predicted: 7.0 / 16.0,
            predicted_prob: 0.5,
            window: [0.5, 0.75],
            safe: 0.5,
            safe_prob: 0.75,
            fallback: false,
            omega_hat: 0.5,
            f_hat: 0.0,
            k_add: 0.0,
            b_add: 0.0,
            dev: (0.0, 0.0),
            theta_z: 2517.0 / 8192.0,
            omega_z: 335.0 / 2048.0,
            guards: StepGuards {
                quiescent: true,
                gains: G {
                    theta_den: true,
                    ..Default::default()
                },
                ..Default::default()
            },
        },
        Expect {
            p_k: 0.5,
            delta: -3.0 / 16.0,
            predicted: 1.0 / 16.0,
            predicted_prob: 0.0,
            window: [0.0, 0.5],
            safe: 0.25,
            safe_prob: 0.5,
            fallback: false,
            omega_hat: 1.0 / 16.0,
            f_hat: -0.125,
            k_add: 0.0,
            b_add: 0.0,
            dev: (2517.0 / 8192.0, 177.0 / 2048.0),
            theta_z: 302595.0 / 1048576.0,
            omega_z: 5659.0 / 262144.0,
            guards: StepGuards {
                quiescent: true,
                gains: G {
                    theta_den: true,
                    omega_den: true,
                    stiffness_negative: true,
                    damping_negative: true,
                    ..Default::default()
                },
                ..Default::default()
            },
        },
        Expect {
            p_k: 0.0,
            delta: -3.0 / 16.0,
            predicted: -0.125,
            predicted_prob: 0.0,
            window: [0.0, 0.0],
            safe: 1.0 / 16.0,
            safe_prob: 0.5,
            fallback: true,
            omega_hat: -0.125,
            f_hat: -0.125,
            k_add: 0.0,
            b_add: 2.0,
            dev: (302595.0 / 1048576.0, 10725.0 / 262144.0),
            theta_z: -61560891.0 / 134217728.0,
            omega_z: 285251519.0 / 33554432.0,
            guards: StepGuards {
                predicted_clamped: true,
                window_clamped: true,
                quiescent: true,
                gains: G {
                    theta_den: true,
                    stiffness_negative: true,
                    ..Default::default()
                },
                ..Default::default()
            },
        },
    ]
}

macro_rules! check {
    ($errs:ident, $k:expr, $name:expr, $got:expr, $want:expr) => {
        if $got != $want {
            $errs.push(format!("step {} {}: got {:?}, want {:?}", $k, $name, $got, $want));
        }
    };
}

/// Runs the trace and lists every value that differs from the hand result.
pub fn mismatches() -> Vec<String> {
    let integrator = Integrator::new(params());
    let ds = dataset();
    let cfg = config();
    let mut pendulum = PendulumState::new(Vector3::zeros(), Vector3::new(0.0, 0.0, W[0]), 0.0);
    let mut state = PredictorState::default();
    let mut errs = Vec::new();
    let tau = Vector3::new(0.0, 0.0, 1.0 / 64.0);
    for (k, e) in expected().iter().enumerate() {
        let out = match run_step(&pendulum, &state, &ds, &input(k), &integrator, &cfg) {
            Ok(o) => o,
            Err(err) => {
                errs.push(format!("step {k}: {err}"));
                return errs;
            }
        };
        let v = &out.vars;
        check!(errs, k, "current", v.current, GridPoint::new(0.0, W[k]));
        check!(errs, k, "p_k", v.p_k, e.p_k);
        check!(errs, k, "delta", v.delta, GridPoint::new(0.0, e.delta));
        check!(errs, k, "predicted", v.predicted, GridPoint::new(0.0, e.predicted));
        check!(errs, k, "predicted_prob", v.predicted_prob, e.predicted_prob);
        check!(errs, k, "window", v.safe.window, [e.window, e.window]);
        check!(errs, k, "safe", v.safe.point, GridPoint::new(0.0, e.safe));
        check!(errs, k, "safe_prob", v.safe.prob, e.safe_prob);
        check!(errs, k, "fallback", v.safe.fallback, e.fallback);
        check!(errs, k, "target", v.target, GridPoint::new(0.0, e.omega_hat));
        check!(errs, k, "f_hat", v.f_hat, e.f_hat);
        check!(errs, k, "k_add", v.gains.k_add, e.k_add);
        check!(errs, k, "b_add", v.gains.b_add, e.b_add);
        check!(errs, k, "stiffness", v.gains.stiffness, Vector3::repeat(1.0 + e.k_add));
        check!(errs, k, "damping", v.gains.damping, Vector3::repeat(1.0 + e.b_add));
        check!(errs, k, "force", v.force, Vector3::new(0.0, 0.0, 1.0 / 64.0));
        check!(errs, k, "phi", v.phi, Vector3::<f64>::zeros());
        check!(errs, k, "tau_hat", v.tau_hat, tau);
        check!(errs, k, "guards", out.guards, e.guards);
        check!(errs, k, "deviation", (out.deviation.theta, out.deviation.omega), e.dev);
        let want = PendulumState::new(
            Vector3::new(0.0, 0.0, e.theta_z),
            Vector3::new(0.0, 0.0, e.omega_z),
            (k + 1) as f64 * T,
        );
        check!(errs, k, "pendulum", out.pendulum, want);
        pendulum = out.pendulum;
        state = out.predictor;
    }
    errs
}
