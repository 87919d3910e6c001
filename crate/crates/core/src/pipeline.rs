//! Per-stream wiring: filter, calibration, force direction, estimation
//! step and windowed evaluation.

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::SafetyDataset;
use crate::dynamics::{Integrator, PendulumState};
use crate::error::{PsmError, Result};
use crate::evaluator::{SafetyLevel, SafetyReport, WindowedEvaluator};
use crate::predictor::{run_step, PredictorConfig, PredictorState, StepInput, StepOutput};
use crate::signal::{gravity_compensate, ypr_rotation, Calibrator, ImuSample, StreamGuard, StreamingLowpass};

/// Everything produced for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub input: StepInput,
    /// Model state at the sample time.
    pub before: PendulumState,
    pub output: StepOutput,
    /// The streaming filter had not filled yet.
    pub warmup: bool,
}

/// Online safety monitor for a single IMU stream. Memory is bounded by the
/// filter and evaluation windows.
#[derive(Debug, Clone)]
pub struct Monitor {
    dataset: Arc<SafetyDataset>,
    integrator: Integrator,
    predictor_config: PredictorConfig,
    filter: StreamingLowpass,
    calibrator: Calibrator,
    guard: StreamGuard,
    evaluator: WindowedEvaluator,
    pendulum: Option<PendulumState>,
    state: PredictorState,
    step: u64,
}

impl Monitor {
    pub fn new(config: &Config, dataset: Arc<SafetyDataset>) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        Ok(Self {
            dataset,
            integrator: config.integrator(),
            predictor_config: config.predictor,
            filter: StreamingLowpass::new(config.filter, config.stream.filter_window)?,
            calibrator: Calibrator::new(config.calibration, config.body.period),
            guard: StreamGuard::default(),
            evaluator: WindowedEvaluator::new(config.eval, config.sample_rate())?,
            pendulum: None,
            state: PredictorState::default(),
            step: 0,
        })
    }

    /// Samples held by the filter and evaluation buffers.
    pub fn buffered(&self) -> usize {
        self.filter.buffered() + self.evaluator.buffered()
    }

    /// Runs one sample through the pipeline; returns the step record and a
    /// report when a window completes.
    pub fn push(&mut self, sample: &ImuSample, label: Option<bool>) -> Result<(TraceRecord, Option<SafetyReport>)> {
        let step = self.step;
        let wrap = |e: PsmError| PsmError::Step {
            step,
            t: sample.t,
            source: Box::new(e),
        };
        sample.validate().map_err(wrap)?;
        self.guard.admit(sample).map_err(wrap)?;

        let warmup = !self.filter.is_warm();
        let a_m = self.filter.push(&sample.accel);
        self.calibrator.feed(&sample.theta_m, &sample.theta_dot_m, &a_m);
        let a_mg = match self.calibrator.reference() {
            Some(r) => Some(gravity_compensate(&a_m, &ypr_rotation(&sample.theta_m), Some(r)).map_err(wrap)?),
            None => None,
        };

        let before = *self
            .pendulum
            .get_or_insert_with(|| PendulumState::new(sample.theta_m, sample.theta_dot_m, sample.t));
        let input = StepInput {
            t: sample.t,
            theta_m: sample.theta_m,
            theta_dot_m: sample.theta_dot_m,
            a_mg,
        };
        let output = run_step(
            &before,
            &self.state,
            &self.dataset,
            &input,
            &self.integrator,
            &self.predictor_config,
        )
        .map_err(wrap)?;

        self.evaluator
            .guards_mut()
            .record(&output.guards, output.vars.safe.fallback, warmup);
        let report = self.evaluator.push(sample.t, &output.deviation, label).map_err(wrap)?;

        // Keep the model on the sample clock even if timestamps jitter.
        let mut next = output.pendulum;
        next.t = sample.t + self.integrator.params.period;
        self.pendulum = Some(next);
        self.state = output.predictor;
        self.step += 1;

        Ok((
            TraceRecord {
                step,
                input,
                before,
                output,
                warmup,
            },
            report,
        ))
    }
}

/// Frame counts per level and agreement with ground-truth labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: u64,
    pub high: u64,
    pub medium: u64,
    pub low: u64,
    /// Frames whose whole window is labelled safe.
    pub labelled_safe: u64,
    /// Frames whose whole window is labelled unsafe.
    pub labelled_unsafe: u64,
    /// Labelled-safe frames classified High.
    pub safe_high: u64,
    /// Labelled-unsafe frames classified Medium or Low.
    pub unsafe_flagged: u64,
}

impl Summary {
    pub fn add(&mut self, report: &SafetyReport) {
        self.frames += 1;
        let high = report.level == SafetyLevel::High;
        match report.level {
            SafetyLevel::High => self.high += 1,
            SafetyLevel::Medium => self.medium += 1,
            SafetyLevel::Low => self.low += 1,
        }
        match report.unsafe_fraction {
            Some(f) if f == 0.0 => {
                self.labelled_safe += 1;
                self.safe_high += high as u64;
            }
            Some(f) if f == 1.0 => {
                self.labelled_unsafe += 1;
                self.unsafe_flagged += !high as u64;
            }
            _ => {}
        }
    }

    pub fn high_fraction(&self) -> f64 {
        ratio(self.high, self.frames)
    }

    /// Fraction of fully labelled frames whose level matches the label.
    pub fn success(&self) -> Option<f64> {
        let n = self.labelled_safe + self.labelled_unsafe;
        (n > 0).then(|| ratio(self.safe_high + self.unsafe_flagged, n))
    }

    pub fn safe_high_fraction(&self) -> Option<f64> {
        (self.labelled_safe > 0).then(|| ratio(self.safe_high, self.labelled_safe))
    }

    pub fn unsafe_flagged_fraction(&self) -> Option<f64> {
        (self.labelled_unsafe > 0).then(|| ratio(self.unsafe_flagged, self.labelled_unsafe))
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Runs a whole stream, handing each report to `sink`.
pub fn evaluate_stream<I, F>(config: &Config, dataset: Arc<SafetyDataset>, samples: I, mut sink: F) -> Result<Summary>
where
    I: IntoIterator<Item = Result<(ImuSample, Option<bool>)>>,
    F: FnMut(&SafetyReport) -> Result<()>,
{
    let mut monitor = Monitor::new(config, dataset)?;
    let mut summary = Summary::default();
    for item in samples {
        let (sample, label) = item?;
        if let (_, Some(report)) = monitor.push(&sample, label)? {
            summary.add(&report);
            sink(&report)?;
        }
    }
    Ok(summary)
}

/// Motionless upright sample.
pub fn still_sample(t: f64, gravity: f64) -> ImuSample {
    ImuSample {
        t,
        theta_m: Vector3::zeros(),
        theta_dot_m: Vector3::zeros(),
        accel: Vector3::new(0.0, 0.0, gravity),
    }
}
