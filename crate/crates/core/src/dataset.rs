//! Reduced-dimension safety dataset: a probability grid over the torso's
//! angle to gravity `theta_g` and the angular-speed norm `omega`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsmError, Result};
use crate::signal::{ImuSample, StreamGuard};

pub const DATASET_VERSION: u32 = 1;

/// Largest stored probability; keeps the `(1 - P)^-k` gain factors finite.
pub const P_MAX: f64 = 0.99;

/// Grid geometry over `(theta_g, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub theta_g_min: f64,
    pub theta_g_max: f64,
    pub omega_max: f64,
    pub n_theta: usize,
    pub m_omega: usize,
}

impl Default for GridSpec {
    /// `theta_g` in `[-1, pi/2]`, `omega` in `[0, 2.5]`, accuracy ranges of
    /// about 0.03 (`1/33`) on both axes.
    fn default() -> Self {
        Self {
            theta_g_min: -1.0,
            theta_g_max: FRAC_PI_2,
            omega_max: 2.5,
            n_theta: 33,
            m_omega: 33,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_g_min.is_finite() && self.theta_g_max.is_finite() && self.theta_g_min < self.theta_g_max) {
            return Err(PsmError::InvalidParams(format!(
                "theta_g range [{}, {}] is empty",
                self.theta_g_min, self.theta_g_max
            )));
        }
        if !(self.omega_max.is_finite() && self.omega_max > 0.0) {
            return Err(PsmError::InvalidParams(format!("omega_max must be > 0, got {}", self.omega_max)));
        }
        if self.n_theta < 2 || self.m_omega < 2 {
            return Err(PsmError::InvalidParams(format!(
                "grid needs at least 2x2 cells, got {}x{}",
                self.n_theta, self.m_omega
            )));
        }
        Ok(())
    }

    pub fn epsilon_theta(&self) -> f64 {
        1.0 / self.n_theta as f64
    }

    pub fn epsilon_omega(&self) -> f64 {
        1.0 / self.m_omega as f64
    }

    pub fn theta_span(&self) -> f64 {
        self.theta_g_max - self.theta_g_min
    }

    /// Continuous row coordinate of `theta_g` (not rounded or clamped).
    pub fn row_coord(&self, theta_g: f64) -> f64 {
        (theta_g - self.theta_g_min) * self.n_theta as f64 / self.theta_span()
    }

    /// Continuous column coordinate of `omega`.
    pub fn col_coord(&self, omega: f64) -> f64 {
        omega * self.m_omega as f64 / self.omega_max
    }

    pub fn clamp_row(&self, n: f64) -> (usize, bool) {
        clamp_index(n, self.n_theta)
    }

    pub fn clamp_col(&self, m: f64) -> (usize, bool) {
        clamp_index(m, self.m_omega)
    }

    pub fn clip_theta(&self, theta_g: f64) -> f64 {
        theta_g.clamp(self.theta_g_min, self.theta_g_max)
    }

    pub fn clip_omega(&self, omega: f64) -> f64 {
        omega.clamp(0.0, self.omega_max)
    }
}

fn clamp_index(x: f64, len: usize) -> (usize, bool) {
    let hi = (len - 1) as f64;
    if x.is_nan() || x < 0.0 {
        (0, true)
    } else if x > hi {
        (len - 1, true)
    } else {
        (x as usize, false)
    }
}

/// Angle between the torso axis and the vertical.
///
/// Uses `h = l_b (1 - cos x cos y)` and the chord `a_c = sqrt(h^2 + l^2)`.
/// Returns 0 when the chord vanishes (upright).
pub fn gravity_angle(theta_x: f64, theta_y: f64, length: f64) -> f64 {
    let (sx, cx) = theta_x.sin_cos();
    let (sy, cy) = theta_y.sin_cos();
    let h = length * (1.0 - cx * cy);
    let l = length * (sy * sy * cx * cx + sx * sx).sqrt();
    gravity_angle_from_heights(h, l, length)
}

/// Branch selection on the drop height `h` and horizontal reach `l`.
pub fn gravity_angle_from_heights(h: f64, l: f64, length: f64) -> f64 {
    let chord = (h * h + l * l).sqrt();
    if chord < 1e-9 {
        return 0.0;
    }
    if h <= length {
        PI - 2.0 * (h / chord).clamp(-1.0, 1.0).acos()
    } else {
        FRAC_PI_2 - ((h - length) / length).clamp(-1.0, 1.0).asin()
    }
}

/// `|theta_dot_m|` clipped to `[0, omega_max]`; the flag reports clipping.
pub fn omega_norm(theta_dot_m: &Vector3<f64>, omega_max: f64) -> (f64, bool) {
    let w = theta_dot_m.norm();
    if w > omega_max {
        (omega_max, true)
    } else {
        (w, false)
    }
}

/// Grid cell of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
}

/// Nearest cell (round half up) and whether either index had to be clamped.
pub fn bin_of(theta_g: f64, omega: f64, spec: &GridSpec) -> (Cell, bool) {
    let (n, cn) = spec.clamp_row((spec.row_coord(theta_g) + 0.5).floor());
    let (m, cm) = spec.clamp_col((spec.col_coord(omega) + 0.5).floor());
    (Cell { n, m }, cn || cm)
}

/// `(theta_g, omega)` represented by cell `(n, m)`.
pub fn value_of(n: usize, m: usize, spec: &GridSpec) -> Result<(f64, f64)> {
    if n >= spec.n_theta || m >= spec.m_omega {
        return Err(PsmError::IndexOutOfGrid {
            n,
            m,
            n_theta: spec.n_theta,
            m_omega: spec.m_omega,
        });
    }
    Ok((
        spec.theta_span() * n as f64 / spec.n_theta as f64 + spec.theta_g_min,
        spec.omega_max * m as f64 / spec.m_omega as f64,
    ))
}

/// Provenance of a built dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub recordings: Vec<String>,
    pub samples: u64,
    pub smoothed: bool,
    /// Build time (UNIX seconds), only recorded when `SOURCE_DATE_EPOCH` is set
    /// so that rebuilding stays byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at: Option<u64>,
}

/// Probability grid `P` and the raw visit counts behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyDataset {
    pub version: u32,
    pub spec: GridSpec,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    pub meta: DatasetMeta,
}

/// Options for [`build_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildOptions {
    /// One 3x3 box-blur pass over the counts before normalization.
    pub smooth: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { smooth: true }
    }
}

/// A named recording fed to [`build_dataset`].
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub samples: Vec<ImuSample>,
}

impl SafetyDataset {
    /// Dataset from explicit counts (normalized and optionally smoothed).
    pub fn from_counts(spec: GridSpec, counts: Vec<Vec<u64>>, options: BuildOptions, meta: DatasetMeta) -> Result<Self> {
        spec.validate()?;
        if counts.len() != spec.n_theta || counts.iter().any(|r| r.len() != spec.m_omega) {
            return Err(PsmError::InvalidParams("count grid shape does not match spec".into()));
        }
        let mass: Vec<Vec<f64>> = if options.smooth {
            box_blur(&counts)
        } else {
            counts.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect()
        };
        let peak = mass.iter().flatten().copied().fold(0.0, f64::max);
        let p = mass
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| if peak > 0.0 { (v / peak).min(P_MAX) } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(Self {
            version: DATASET_VERSION,
            spec,
            p,
            counts,
            meta: DatasetMeta {
                smoothed: options.smooth,
                ..meta
            },
        })
    }

    /// Dataset with a literal probability grid; counts mirror `P > 0`.
    pub fn from_probabilities(spec: GridSpec, p: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if p.len() != spec.n_theta || p.iter().any(|r| r.len() != spec.m_omega) {
            return Err(PsmError::InvalidParams("probability grid shape does not match spec".into()));
        }
        if p.iter().flatten().any(|v| !(0.0..=P_MAX).contains(v)) {
            return Err(PsmError::InvalidParams(format!("probabilities must lie in [0, {P_MAX}]")));
        }
        let counts = p.iter().map(|r| r.iter().map(|&v| u64::from(v > 0.0)).collect()).collect();
        Ok(Self {
            version: DATASET_VERSION,
            spec,
            p,
            counts,
            meta: DatasetMeta::default(),
        })
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.p[cell.n][cell.m]
    }

    /// `P` at the cell containing `(theta_g, omega)`.
    pub fn lookup(&self, theta_g: f64, omega: f64) -> f64 {
        self.get(bin_of(theta_g, omega, &self.spec).0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DATASET_VERSION {
            return Err(PsmError::UnsupportedVersion(self.version));
        }
        self.spec.validate()?;
        let (n, m) = (self.spec.n_theta, self.spec.m_omega);
        let p_ok = self.p.len() == n && self.p.iter().all(|r| r.len() == m);
        let c_ok = self.counts.len() == n && self.counts.iter().all(|r| r.len() == m);
        if !p_ok || !c_ok {
            return Err(PsmError::InvalidParams("dataset grid shape does not match spec".into()));
        }
        if self.p.iter().flatten().any(|v| !(0.0..=P_MAX).contains(v)) {
            return Err(PsmError::InvalidParams(format!("probabilities must lie in [0, {P_MAX}]")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ds: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Mean over the in-bounds 3x3 neighbourhood of every cell.
fn box_blur(counts: &[Vec<u64>]) -> Vec<Vec<f64>> {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; cols]; rows];
    for (i, out_row) in out.iter_mut().enumerate() {
        for (j, cell) in out_row.iter_mut().enumerate() {
            let mut sum = 0u64;
            let mut n = 0u32;
            for r in i.saturating_sub(1)..=(i + 1).min(rows - 1) {
                for c in j.saturating_sub(1)..=(j + 1).min(cols - 1) {
                    sum += counts[r][c];
                    n += 1;
                }
            }
            *cell = sum as f64 / f64::from(n);
        }
    }
    out
}

/// Visit counts of one recording.
pub fn histogram(samples: &[ImuSample], spec: &GridSpec, length: f64) -> Result<Vec<Vec<u64>>> {
    let mut guard = StreamGuard::default();
    let mut counts = vec![vec![0u64; spec.m_omega]; spec.n_theta];
    for s in samples {
        guard.admit(s)?;
        let theta_g = gravity_angle(s.theta_m.x, s.theta_m.y, length);
        let (omega, _) = omega_norm(&s.theta_dot_m, spec.omega_max);
        let (cell, _) = bin_of(theta_g, omega, spec);
        counts[cell.n][cell.m] += 1;
    }
    Ok(counts)
}

/// Histograms every recording (in parallel), sums the counts and normalizes
/// by the busiest cell.
pub fn build_dataset(recordings: &[Recording], spec: &GridSpec, length: f64, options: BuildOptions) -> Result<SafetyDataset> {
    if recordings.is_empty() {
        return Err(PsmError::EmptyRecordings);
    }
    spec.validate()?;
    let per_recording: Vec<Vec<Vec<u64>>> = recordings
        .par_iter()
        .map(|r| histogram(&r.samples, spec, length))
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0u64; spec.m_omega]; spec.n_theta];
    for h in &per_recording {
        for (row, hrow) in counts.iter_mut().zip(h) {
            for (c, v) in row.iter_mut().zip(hrow) {
                *c += v;
            }
        }
    }
    let meta = DatasetMeta {
        recordings: recordings.iter().map(|r| r.id.clone()).collect(),
        samples: recordings.iter().map(|r| r.samples.len() as u64).sum(),
        smoothed: options.smooth,
        built_at: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()),
    };
    SafetyDataset::from_counts(*spec, counts, options, meta)
}
