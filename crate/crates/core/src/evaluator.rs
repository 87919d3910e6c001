//! Windowed frequency-domain scoring of model-vs-measurement deviations.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{PsmError, Result};
use crate::predictor::{Deviation, StepGuards};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Samples per window, a power of two.
    pub window_len: usize,
    /// Lower band edge (Hz).
    pub lambda_m: f64,
    /// Upper band edge (Hz), also the score's `1/lambda` prefactor.
    pub lambda: f64,
    /// Medium threshold.
    pub eps_em: f64,
    /// Critical threshold.
    pub eps_ec: f64,
    /// `n` in `e_q = |theta - theta_m| / n^2`.
    pub n_norm: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            window_len: 64,
            lambda_m: 0.0,
            lambda: 6.0,
            eps_em: 0.022,
            eps_ec: 0.035,
            n_norm: 1.0,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if self.window_len < 4 || !self.window_len.is_power_of_two() {
            return Err(PsmError::InvalidParams(format!(
                "window_len must be a power of two >= 4, got {}",
                self.window_len
            )));
        }
        let nyquist = sample_rate / 2.0;
        if !(0.0 <= self.lambda_m && self.lambda_m < self.lambda && self.lambda <= nyquist) {
            return Err(PsmError::InvalidParams(format!(
                "band must satisfy 0 <= lambda_m < lambda <= {nyquist}, got [{}, {}]",
                self.lambda_m, self.lambda
            )));
        }
        if band_bins(self, sample_rate).is_empty() {
            return Err(PsmError::InvalidParams("frequency band contains no DFT bin".into()));
        }
        if !(self.eps_em >= 0.0 && self.eps_em < self.eps_ec) {
            return Err(PsmError::InvalidParams(format!(
                "thresholds must satisfy 0 <= eps_em < eps_ec, got {} and {}",
                self.eps_em, self.eps_ec
            )));
        }
        if !(self.n_norm >= 1.0) {
            return Err(PsmError::InvalidParams(format!("n_norm must be >= 1, got {}", self.n_norm)));
        }
        Ok(())
    }

    /// Samples between consecutive reports (50% overlap).
    pub fn hop(&self) -> usize {
        self.window_len / 2
    }
}

/// `|a - b| / n^2`, applied to an already computed difference norm.
pub fn deviation(diff_norm: f64, n_norm: f64) -> f64 {
    diff_norm / (n_norm * n_norm)
}

/// One-sided bins `k` in `0..=N/2` with `lambda_m <= k fs / N <= lambda`.
pub fn band_bins(spec: &EvalSpec, sample_rate: f64) -> std::ops::RangeInclusive<usize> {
    let n = spec.window_len;
    let df = sample_rate / n as f64;
    // Small slack so band edges that land on a bin are included despite round-off.
    let lo = (spec.lambda_m / df - 1e-9).ceil().max(0.0) as usize;
    let hi = ((spec.lambda / df + 1e-9).floor() as usize).min(n / 2);
    lo..=hi
}

/// Planned DFT for a fixed window length.
#[derive(Clone)]
pub struct SpectralScorer {
    spec: EvalSpec,
    sample_rate: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralScorer")
            .field("spec", &self.spec)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl SpectralScorer {
    pub fn new(spec: EvalSpec, sample_rate: f64) -> Result<Self> {
        spec.validate(sample_rate)?;
        let fft = FftPlanner::new().plan_fft_forward(spec.window_len);
        Ok(Self { spec, sample_rate, fft })
    }

    /// Normalized magnitude spectrum `|X_k| / N`, one-sided.
    pub fn magnitudes(&self, window: &[f64]) -> Result<Vec<f64>> {
        let n = self.spec.window_len;
        if window.len() < n {
            return Err(PsmError::WindowNotFull {
                have: window.len(),
                need: n,
            });
        }
        if window.len() > n {
            return Err(PsmError::InvalidParams(format!("window holds {} samples, expected {n}", window.len())));
        }
        let mut buf: Vec<Complex<f64>> = window.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf[..=n / 2].iter().map(|c| c.norm() * scale).collect())
    }

    pub fn score(&self, window: &[f64]) -> Result<f64> {
        let mags = self.magnitudes(window)?;
        let bins = band_bins(&self.spec, self.sample_rate);
        let count = bins.clone().count() as f64;
        let sum: f64 = mags[bins].iter().sum();
        Ok(sum / count / self.spec.lambda)
    }
}

/// `E_m` of one full window; see [`SpectralScorer`] to reuse the FFT plan.
pub fn spectral_score(window: &[f64], spec: &EvalSpec, sample_rate: f64) -> Result<f64> {
    SpectralScorer::new(*spec, sample_rate)?.score(window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SafetyLevel {
    Low,
    Medium,
    High,
}

impl fmt::Display for SafetyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SafetyLevel::Low => "Low",
            SafetyLevel::Medium => "Medium",
            SafetyLevel::High => "High",
        })
    }
}

/// Worst channel decides.
pub fn classify(e_m_theta: f64, e_m_omega: f64, spec: &EvalSpec) -> SafetyLevel {
    let score = e_m_theta.max(e_m_omega);
    if score > spec.eps_ec {
        SafetyLevel::Low
    } else if score > spec.eps_em {
        SafetyLevel::Medium
    } else {
        SafetyLevel::High
    }
}

/// How many samples since the previous report raised each guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GuardCounts {
    pub omega_clipped: u32,
    pub index_clamped: u32,
    pub fallback: u32,
    pub denominator: u32,
    pub gain_clamped: u32,
    pub quiescent: u32,
    pub not_calibrated: u32,
    pub filter_warmup: u32,
}

impl GuardCounts {
    pub fn record(&mut self, guards: &StepGuards, fallback: bool, warmup: bool) {
        let g = &guards.gains;
        self.omega_clipped += guards.omega_clipped as u32;
        self.index_clamped += (guards.bin_clamped || guards.predicted_clamped || guards.window_clamped) as u32;
        self.fallback += fallback as u32;
        self.denominator += (g.theta_den || g.omega_den) as u32;
        self.gain_clamped +=
            (g.stiffness_negative || g.damping_negative || g.stiffness_saturated || g.damping_saturated) as u32;
        self.quiescent += guards.quiescent as u32;
        self.not_calibrated += guards.not_calibrated as u32;
        self.filter_warmup += warmup as u32;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Zero-based report index.
    pub window: u64,
    /// Time of the window's last sample.
    pub t: f64,
    /// RMS of `e_theta` over the window.
    pub e_theta: f64,
    /// RMS of `e_omega` over the window.
    pub e_omega: f64,
    #[serde(rename = "E_m_theta")]
    pub e_m_theta: f64,
    #[serde(rename = "E_m_omega")]
    pub e_m_omega: f64,
    pub level: SafetyLevel,
    /// Fraction of window samples labelled unsafe, when labels are known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unsafe_fraction: Option<f64>,
    pub guard_flags: GuardCounts,
}

/// Sliding 50%-overlap windows over the two deviation channels.
#[derive(Debug, Clone)]
pub struct WindowedEvaluator {
    scorer: SpectralScorer,
    theta: VecDeque<f64>,
    omega: VecDeque<f64>,
    labels: VecDeque<Option<bool>>,
    since_report: usize,
    reports: u64,
    guards: GuardCounts,
}

impl WindowedEvaluator {
    pub fn new(spec: EvalSpec, sample_rate: f64) -> Result<Self> {
        let n = spec.window_len;
        Ok(Self {
            scorer: SpectralScorer::new(spec, sample_rate)?,
            theta: VecDeque::with_capacity(n),
            omega: VecDeque::with_capacity(n),
            labels: VecDeque::with_capacity(n),
            since_report: 0,
            reports: 0,
            guards: GuardCounts::default(),
        })
    }

    pub fn spec(&self) -> &EvalSpec {
        &self.scorer.spec
    }

    /// Samples currently held.
    pub fn buffered(&self) -> usize {
        self.theta.len()
    }

    pub fn guards_mut(&mut self) -> &mut GuardCounts {
        &mut self.guards
    }

    /// Adds one sample; returns a report when a window completes.
    pub fn push(&mut self, t: f64, dev: &Deviation, label: Option<bool>) -> Result<Option<SafetyReport>> {
        let spec = self.scorer.spec;
        let n = spec.window_len;
        if self.theta.len() == n {
            self.theta.pop_front();
            self.omega.pop_front();
            self.labels.pop_front();
        }
        self.theta.push_back(deviation(dev.theta, spec.n_norm));
        self.omega.push_back(deviation(dev.omega, spec.n_norm));
        self.labels.push_back(label);
        self.since_report += 1;

        if self.theta.len() < n || (self.reports > 0 && self.since_report < spec.hop()) {
            return Ok(None);
        }
        self.since_report = 0;

        let theta = self.theta.make_contiguous();
        let e_m_theta = self.scorer.score(theta)?;
        let e_theta = rms(theta);
        let omega = self.omega.make_contiguous();
        let e_m_omega = self.scorer.score(omega)?;
        let e_omega = rms(omega);

        let unsafe_fraction = if self.labels.iter().all(Option::is_some) {
            let bad = self.labels.iter().filter(|l| **l == Some(true)).count();
            Some(bad as f64 / n as f64)
        } else {
            None
        };

        let report = SafetyReport {
            window: self.reports,
            t,
            e_theta,
            e_omega,
            e_m_theta,
            e_m_omega,
            level: classify(e_m_theta, e_m_omega, &spec),
            unsafe_fraction,
            guard_flags: std::mem::take(&mut self.guards),
        };
        self.reports += 1;
        Ok(Some(report))
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
