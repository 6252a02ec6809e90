//! Quadrant-detector pointing, acquisition and tracking.
//!
//! Quadrant convention, looking at the detector face:
//!
//! ```text
//!        +y
//!    Q2  |  Q1
//!   -----+----- +x
//!    Q3  |  Q4
//! ```
//!
//! The beam is a circular Gaussian of 1/e² intensity radius `beam_radius_m`.
//! Its overlap with each quadrant separates into a product of 1-D error
//! functions, so the response is evaluated in closed form.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_trace::GaussianProcess;
use crate::error::{FsoError, Result};
use crate::numeric::{chunk_rng, derive_seed, domain, gaussian_beam_overlap};

/// Maximum correction rate of the steering loop.
pub const MAX_LOOP_RATE_HZ: f64 = 1000.0;

/// Consecutive out-of-detector steps that count as divergence.
const DIVERGENCE_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdReading {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
}

impl QdReading {
    pub fn sum(&self) -> f64 {
        self.v1 + self.v2 + self.v3 + self.v4
    }

    fn scaled(self, c: f64) -> Self {
        QdReading {
            v1: self.v1 * c,
            v2: self.v2 * c,
            v3: self.v3 * c,
            v4: self.v4 * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdGeometry {
    /// Side of the square detector.
    pub detector_size_m: f64,
    pub beam_radius_m: f64,
    /// Width of the dead strips between quadrants.
    pub gap_m: f64,
    /// Metres per unit normalised difference; `None` calibrates it from the
    /// small-offset slope of the noiseless response.
    #[serde(default)]
    pub estimator_gain: Option<f64>,
}

impl Default for QdGeometry {
    fn default() -> Self {
        QdGeometry {
            detector_size_m: 1e-3,
            beam_radius_m: 0.3e-3,
            gap_m: 10e-6,
            estimator_gain: None,
        }
    }
}

impl QdGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.detector_size_m > 0.0 && self.beam_radius_m > 0.0 && self.gap_m > 0.0) {
            return Err(FsoError::domain("QD sizes must be positive"));
        }
        if !(self.gap_m < self.detector_size_m) {
            return Err(FsoError::domain("QD gap must be smaller than the detector"));
        }
        if let Some(g) = self.estimator_gain {
            if !(g > 0.0) {
                return Err(FsoError::domain("estimator_gain must be > 0"));
            }
        }
        Ok(())
    }

    /// Estimator gain: configured value, or `1/slope` of the noiseless
    /// normalised x-difference at the origin.
    pub fn gain(&self) -> Result<f64> {
        self.validate()?;
        if let Some(g) = self.estimator_gain {
            return Ok(g);
        }
        let h = self.beam_radius_m * 1e-4;
        let diff = |x: f64| {
            let r = quadrant_overlaps(x, 0.0, self);
            ((r.v1 + r.v4) - (r.v2 + r.v3)) / r.sum()
        };
        let slope = (diff(h) - diff(-h)) / (2.0 * h);
        if !(slope > 0.0) {
            return Err(FsoError::Calibration("QD response has no slope at the origin".into()));
        }
        Ok(1.0 / slope)
    }
}

/// Fraction of beam power on each quadrant for a beam centred at `(x, y)`.
fn quadrant_overlaps(x: f64, y: f64, g: &QdGeometry) -> QdReading {
    let (a, b) = (g.gap_m / 2.0, g.detector_size_m / 2.0);
    let c = (x, y);
    let r = g.beam_radius_m;
    QdReading {
        v1: gaussian_beam_overlap([a, b, a, b], c, r),
        v2: gaussian_beam_overlap([-b, -a, a, b], c, r),
        v3: gaussian_beam_overlap([-b, -a, -b, -a], c, r),
        v4: gaussian_beam_overlap([a, b, -b, -a], c, r),
    }
}

fn add_noise<R: Rng>(clean: QdReading, noise_std: f64, rng: &mut R) -> QdReading {
    if noise_std == 0.0 {
        return clean;
    }
    let mut n = || noise_std * Distribution::<f64>::sample(&StandardNormal, rng);
    QdReading {
        v1: (clean.v1 + n()).max(0.0),
        v2: (clean.v2 + n()).max(0.0),
        v3: (clean.v3 + n()).max(0.0),
        v4: (clean.v4 + n()).max(0.0),
    }
}

/// Quadrant powers for a beam offset `(offset_x, offset_y)`: overlap
/// fractions times `signal_power` plus i.i.d. Gaussian noise, clamped at 0.
pub fn qd_response(
    offset_x: f64,
    offset_y: f64,
    geometry: &QdGeometry,
    signal_power: f64,
    noise_std: f64,
    seed: u64,
) -> Result<QdReading> {
    geometry.validate()?;
    check_signal(signal_power, noise_std)?;
    let mut rng = chunk_rng(derive_seed(seed, domain::QD_NOISE), 0);
    let clean = quadrant_overlaps(offset_x, offset_y, geometry).scaled(signal_power);
    Ok(add_noise(clean, noise_std, &mut rng))
}

fn check_signal(signal_power: f64, noise_std: f64) -> Result<()> {
    if !(signal_power >= 0.0) || !(noise_std >= 0.0) {
        return Err(FsoError::domain("signal power and noise std must be >= 0"));
    }
    Ok(())
}

/// Normalised-difference position estimate `(x̂, ŷ)` in metres.
pub fn estimate_displacement(reading: &QdReading, gain: f64) -> Result<(f64, f64)> {
    let s = reading.sum();
    if !(s > 0.0) {
        return Err(FsoError::domain("quadrant sum is zero; no displacement estimate"));
    }
    let dx = (reading.v1 + reading.v4) - (reading.v2 + reading.v3);
    let dy = (reading.v1 + reading.v2) - (reading.v3 + reading.v4);
    Ok((gain * dx / s, gain * dy / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiSample {
    pub averaged: QdReading,
    /// `Σ signal / √(Σ noise²)` with per-reading noise `2σ` on the quadrant sum.
    pub snr: f64,
    /// Noiseless input: the SNR is infinite.
    pub saturated: bool,
}

/// Coherent aggregation of `m` readings taken through one static channel.
pub fn multisample_snr(readings: &[QdReading], noise_std: f64) -> Result<MultiSample> {
    if readings.is_empty() {
        return Err(FsoError::domain("multisample aggregation needs at least one reading"));
    }
    let m = readings.len() as f64;
    let total: f64 = readings.iter().map(QdReading::sum).sum();
    let averaged = QdReading {
        v1: readings.iter().map(|r| r.v1).sum::<f64>() / m,
        v2: readings.iter().map(|r| r.v2).sum::<f64>() / m,
        v3: readings.iter().map(|r| r.v3).sum::<f64>() / m,
        v4: readings.iter().map(|r| r.v4).sum::<f64>() / m,
    };
    let saturated = noise_std == 0.0;
    let snr = if saturated {
        f64::INFINITY
    } else {
        total / (2.0 * noise_std * m.sqrt())
    };
    Ok(MultiSample {
        averaged,
        snr,
        saturated,
    })
}

/// Monte Carlo amplitude SNR (mean over standard deviation of the averaged
/// quadrant sum) for `m` samples per estimate, from `trials` estimates.
pub fn measured_snr(
    m: usize,
    trials: usize,
    geometry: &QdGeometry,
    signal_power: f64,
    noise_std: f64,
    seed: u64,
) -> Result<f64> {
    geometry.validate()?;
    check_signal(signal_power, noise_std)?;
    if m == 0 || trials < 2 {
        return Err(FsoError::domain("need m >= 1 and at least two trials"));
    }
    let clean = quadrant_overlaps(0.0, 0.0, geometry).scaled(signal_power);
    let noise_seed = derive_seed(seed, domain::QD_NOISE);
    const TRIAL_CHUNK: usize = 4096;
    let parts: Vec<crate::numeric::Moments> = (0..trials.div_ceil(TRIAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(noise_seed, c as u64);
            let n = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            (0..n)
                .map(|_| (0..m).map(|_| add_noise(clean, noise_std, &mut rng).sum()).sum::<f64>() / m as f64)
                .collect()
        })
        .collect();
    let mut all = crate::numeric::Moments::default();
    for p in &parts {
        all.merge(p);
    }
    Ok(all.mean / all.std())
}

/// Band-limited Gaussian platform jitter, applied independently on x and y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub rms_m: f64,
    /// Correlation time is `1/bandwidth_hz`.
    pub bandwidth_hz: f64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Disturbance {
            rms_m: 0.05e-3,
            bandwidth_hz: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatConfig {
    pub geometry: QdGeometry,
    pub signal_power: f64,
    /// Per-quadrant, per-sample noise standard deviation.
    pub noise_std: f64,
    /// Scintillation index of the per-step static channel draw (log-normal).
    pub channel_scintillation_index: f64,
    /// Samples aggregated per correction.
    pub m: usize,
    pub loop_rate_hz: f64,
    /// Proportional controller gain; 0 opens the loop.
    pub controller_gain: f64,
    pub disturbance: Disturbance,
    pub duration_s: f64,
    pub initial_offset_m: (f64, f64),
}

impl Default for PatConfig {
    fn default() -> Self {
        PatConfig {
            geometry: QdGeometry::default(),
            signal_power: 1.0,
            noise_std: 0.05,
            channel_scintillation_index: 0.1,
            m: 1,
            loop_rate_hz: MAX_LOOP_RATE_HZ,
            controller_gain: 0.8,
            disturbance: Disturbance::default(),
            duration_s: 1.0,
            initial_offset_m: (0.0, 0.0),
        }
    }
}

impl PatConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        check_signal(self.signal_power, self.noise_std)?;
        if self.m == 0 {
            return Err(FsoError::domain("m must be >= 1"));
        }
        if !(self.loop_rate_hz > 0.0 && self.loop_rate_hz <= MAX_LOOP_RATE_HZ) {
            return Err(FsoError::domain(format!(
                "loop_rate_hz must lie in (0, {MAX_LOOP_RATE_HZ}]"
            )));
        }
        if self.steps() < 100 {
            return Err(FsoError::domain("duration must cover at least 100 corrections"));
        }
        if !(self.controller_gain >= 0.0) || !(self.channel_scintillation_index >= 0.0) {
            return Err(FsoError::domain(
                "controller gain and scintillation index must be >= 0",
            ));
        }
        if !(self.disturbance.rms_m >= 0.0) || !(self.disturbance.bandwidth_hz > 0.0) {
            return Err(FsoError::domain(
                "disturbance needs rms >= 0 and bandwidth > 0",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration_s * self.loop_rate_hz).round().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub time_s: Vec<f64>,
    pub offset_x_m: Vec<f64>,
    pub offset_y_m: Vec<f64>,
    pub summary: TrackingSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub m: usize,
    pub steps: usize,
    pub estimator_gain: f64,
    /// RMS of the x residual.
    pub residual_rms_x_m: f64,
    /// RMS of the radial residual.
    pub residual_rms_m: f64,
    pub residual_max_m: f64,
}

impl TrackingResult {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "offset_x_m", "offset_y_m"])?;
        for i in 0..self.time_s.len() {
            w.write_record([
                self.time_s[i].to_string(),
                self.offset_x_m[i].to_string(),
                self.offset_y_m[i].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Closed-loop tracking: each step acquires `m` readings through one static
/// channel draw, estimates the offset from their average and applies a
/// proportional correction. The residual is the beam offset on the detector,
/// recorded before each correction.
pub fn run_tracking_loop(config: &PatConfig, seed: u64) -> Result<TrackingResult> {
    config.validate()?;
    let gain = config.geometry.gain()?;
    let steps = config.steps();
    let dt = 1.0 / config.loop_rate_hz;
    let tau = 1.0 / config.disturbance.bandwidth_hz;
    let dist_seed = derive_seed(seed, domain::DISTURBANCE);
    let (jx, jy) = if config.disturbance.rms_m > 0.0 {
        let gx = GaussianProcess::new(tau, dt, derive_seed(dist_seed, 0))?;
        let gy = GaussianProcess::new(tau, dt, derive_seed(dist_seed, 1))?;
        (gx.samples(0, steps), gy.samples(0, steps))
    } else {
        (vec![0.0; steps], vec![0.0; steps])
    };
    let rms = config.disturbance.rms_m;
    let mut noise_rng = chunk_rng(derive_seed(seed, domain::QD_NOISE), 0);
    let mut channel_rng = chunk_rng(derive_seed(seed, domain::STATIC_CHANNEL), 0);
    let sigma2 = config.channel_scintillation_index.ln_1p();
    let channel = Normal::new(-sigma2 / 2.0, sigma2.sqrt())
        .map_err(|e| FsoError::domain(e.to_string()))?;

    let (mut cx, mut cy) = config.initial_offset_m;
    let mut result = TrackingResult {
        time_s: Vec::with_capacity(steps),
        offset_x_m: Vec::with_capacity(steps),
        offset_y_m: Vec::with_capacity(steps),
        summary: TrackingSummary {
            m: config.m,
            steps,
            estimator_gain: gain,
            residual_rms_x_m: 0.0,
            residual_rms_m: 0.0,
            residual_max_m: 0.0,
        },
    };
    let mut outside = 0;
    let mut readings = Vec::with_capacity(config.m);
    for k in 0..steps {
        let t = k as f64 * dt;
        let (x, y) = (cx + rms * jx[k], cy + rms * jy[k]);
        result.time_s.push(t);
        result.offset_x_m.push(x);
        result.offset_y_m.push(y);

        let r = x.hypot(y);
        if r > config.geometry.detector_size_m {
            outside += 1;
            if outside >= DIVERGENCE_STEPS {
                return Err(FsoError::Unstable { time_s: t, offset_m: r });
            }
        } else {
            outside = 0;
        }

        let h = if sigma2 > 0.0 {
            channel.sample(&mut channel_rng).exp()
        } else {
            1.0
        };
        let clean = quadrant_overlaps(x, y, &config.geometry).scaled(config.signal_power * h);
        readings.clear();
        readings.extend((0..config.m).map(|_| add_noise(clean, config.noise_std, &mut noise_rng)));
        let agg = multisample_snr(&readings, config.noise_std)?;
        // A dark detector gives no estimate; hold the mirror.
        if let Ok((ex, ey)) = estimate_displacement(&agg.averaged, gain) {
            cx -= config.controller_gain * ex;
            cy -= config.controller_gain * ey;
        }
    }
    let n = steps as f64;
    let s = &mut result.summary;
    s.residual_rms_x_m = (result.offset_x_m.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let radial = result.offset_x_m.iter().zip(&result.offset_y_m).map(|(x, y)| x.hypot(*y));
    s.residual_rms_m = (radial.clone().map(|r| r * r).sum::<f64>() / n).sqrt();
    s.residual_max_m = radial.fold(0.0, f64::max);
    Ok(result)
}
