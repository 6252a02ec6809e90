//! Seeded, time-correlated intensity fading traces.
//!
//! A trace is built from a stationary standard-normal process with Gaussian
//! autocorrelation `exp(-(t/τ₀)²)`, pushed through the inverse CDF of the
//! target intensity marginal (log-normal or gamma-gamma). Generation is split
//! into fixed-size chunks whose random streams depend only on
//! `(seed, chunk index)`, so results do not depend on the worker count.

mod gaussian_process;
mod io;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};

use crate::atmosphere::LinkGeometry;
use crate::error::{FsoError, Result};
use crate::numeric::{derive_seed, domain, normal_cdf, normal_quantile};

pub use gaussian_process::GaussianProcess;
pub use io::{read_binary, read_csv, save, write_binary, write_csv, TRACE_MAGIC};

/// Samples per generation chunk.
pub const TRACE_CHUNK: usize = 1 << 16;

/// Largest trace materialised in memory by [`generate_trace`].
pub const DEFAULT_MAX_SAMPLES: u64 = 100_000_000;

/// Minimum length accepted by [`trace_stats`].
pub const MIN_STATS_SAMPLES: usize = 100;

fn andrews_terms(rytov: f64) -> (f64, f64) {
    let s125 = rytov.powf(6.0 / 5.0); // σ_R^{12/5}
    let large = 0.49 * rytov / (1.0 + 1.11 * s125).powf(7.0 / 6.0);
    let small = 0.51 * rytov / (1.0 + 0.69 * s125).powf(5.0 / 6.0);
    (large, small)
}

/// Plane-wave scintillation index for Rytov variance `rytov`, valid from weak
/// through saturated fluctuations.
pub fn scintillation_index(rytov: f64) -> Result<f64> {
    if !(rytov >= 0.0) || !rytov.is_finite() {
        return Err(FsoError::domain("Rytov variance must be finite and >= 0"));
    }
    let (large, small) = andrews_terms(rytov);
    Ok((large + small).exp_m1())
}

/// Gamma-gamma shape parameters `(α, β)` for Rytov variance `rytov`.
pub fn gamma_gamma_params(rytov: f64) -> Result<(f64, f64)> {
    if !(rytov > 0.0) || !rytov.is_finite() {
        return Err(FsoError::domain(
            "gamma-gamma parameters need a positive Rytov variance; use log-normal fading at zero turbulence",
        ));
    }
    let (large, small) = andrews_terms(rytov);
    Ok((1.0 / large.exp_m1(), 1.0 / small.exp_m1()))
}

/// Taylor frozen-turbulence coherence time: Fresnel scale over transverse wind.
pub fn coherence_time(geometry: &LinkGeometry, wind_mps: f64) -> Result<f64> {
    if !(wind_mps > 0.0) {
        return Err(FsoError::domain("wind speed must be > 0 for a coherence time"));
    }
    geometry.validate()?;
    Ok((geometry.wavelength_m * geometry.distance_m).sqrt() / wind_mps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    LogNormal,
    GammaGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingModel {
    pub kind: FadingKind,
    /// Scintillation index (normalised intensity variance).
    pub sigma_i2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl FadingModel {
    pub fn log_normal(sigma_i2: f64) -> Self {
        FadingModel {
            kind: FadingKind::LogNormal,
            sigma_i2,
            alpha: None,
            beta: None,
        }
    }

    pub fn gamma_gamma(alpha: f64, beta: f64) -> Self {
        FadingModel {
            kind: FadingKind::GammaGamma,
            sigma_i2: 1.0 / alpha + 1.0 / beta + 1.0 / (alpha * beta),
            alpha: Some(alpha),
            beta: Some(beta),
        }
    }

    pub fn from_rytov(kind: FadingKind, rytov: f64) -> Result<Self> {
        match kind {
            FadingKind::LogNormal => Ok(Self::log_normal(scintillation_index(rytov)?)),
            FadingKind::GammaGamma => {
                let (a, b) = gamma_gamma_params(rytov)?;
                Ok(Self::gamma_gamma(a, b))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_i2 >= 0.0) || !self.sigma_i2.is_finite() {
            return Err(FsoError::domain("scintillation index must be finite and >= 0"));
        }
        match (self.kind, self.alpha, self.beta) {
            (FadingKind::LogNormal, None, None) => Ok(()),
            (FadingKind::LogNormal, _, _) => Err(FsoError::domain(
                "alpha/beta are only meaningful for gamma-gamma fading",
            )),
            (FadingKind::GammaGamma, Some(a), Some(b)) if a > 0.0 && b > 0.0 => Ok(()),
            (FadingKind::GammaGamma, _, _) => Err(FsoError::domain(
                "gamma-gamma fading needs positive alpha and beta",
            )),
        }
    }
}

/// Maps standard-normal values onto the target intensity marginal.
#[derive(Debug, Clone)]
enum Marginal {
    Constant,
    LogNormal { mu: f64, sigma: f64 },
    GammaGamma(GammaGammaQuantile),
}

impl Marginal {
    fn new(model: &FadingModel) -> Result<Self> {
        model.validate()?;
        if model.sigma_i2 == 0.0 {
            return Ok(Marginal::Constant);
        }
        Ok(match model.kind {
            FadingKind::LogNormal => {
                let var = model.sigma_i2.ln_1p();
                Marginal::LogNormal {
                    mu: -0.5 * var,
                    sigma: var.sqrt(),
                }
            }
            FadingKind::GammaGamma => Marginal::GammaGamma(GammaGammaQuantile::new(
                model.alpha.unwrap_or_default(),
                model.beta.unwrap_or_default(),
            )?),
        })
    }

    fn transform(&self, z: f64) -> f64 {
        match self {
            Marginal::Constant => 1.0,
            Marginal::LogNormal { mu, sigma } => (mu + sigma * z).exp(),
            Marginal::GammaGamma(table) => table.from_normal(z),
        }
    }
}

/// Inverse CDF of the unit-mean gamma-gamma distribution, tabulated against
/// the standard-normal score `Φ⁻¹(F(x))`.
#[derive(Debug, Clone)]
pub struct GammaGammaQuantile {
    z: Vec<f64>,
    ln_x: Vec<f64>,
}

const GG_TABLE_POINTS: usize = 768;
const GG_OUTER_PANELS: usize = 800;

impl GammaGammaQuantile {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(FsoError::domain("gamma-gamma needs alpha, beta > 0"));
        }
        let gamma = |shape: f64| {
            Gamma::new(shape, shape).map_err(|e| FsoError::domain(format!("gamma({shape}): {e}")))
        };
        let ga = gamma(alpha)?;
        let gb = gamma(beta)?;
        let eps = 1e-11;
        let lo = ga.inverse_cdf(eps).max(1e-300) * gb.inverse_cdf(eps).max(1e-300);
        let hi = ga.inverse_cdf(1.0 - eps) * gb.inverse_cdf(1.0 - eps);
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());

        // Outer integral over ln y of the α-variate, trimmed to its bulk.
        let t_lo = ga.inverse_cdf(1e-14).max(1e-300).ln();
        let t_hi = ga.inverse_cdf(1.0 - 1e-14).ln();
        let h = (t_hi - t_lo) / GG_OUTER_PANELS as f64;
        let nodes: Vec<(f64, f64)> = (0..=GG_OUTER_PANELS)
            .map(|i| {
                let t = t_lo + i as f64 * h;
                let y = t.exp();
                let w = if i == 0 || i == GG_OUTER_PANELS {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                (y, w * h / 3.0 * ga.pdf(y) * y)
            })
            .collect();
        let mass: f64 = nodes.iter().map(|(_, w)| w).sum();

        let mut z = Vec::with_capacity(GG_TABLE_POINTS);
        let mut ln_x = Vec::with_capacity(GG_TABLE_POINTS);
        for i in 0..GG_TABLE_POINTS {
            let lx = ln_lo + (ln_hi - ln_lo) * i as f64 / (GG_TABLE_POINTS - 1) as f64;
            let x = lx.exp();
            let (mut cdf, mut sf) = (0.0, 0.0);
            for &(y, w) in &nodes {
                cdf += w * gb.cdf(x / y);
                sf += w * gb.sf(x / y);
            }
            cdf /= mass;
            sf /= mass;
            let score = if cdf < 0.5 {
                normal_quantile(cdf)
            } else {
                -normal_quantile(sf)
            };
            if !score.is_finite() {
                continue;
            }
            if z.last().is_some_and(|&last| score <= last) {
                continue;
            }
            z.push(score);
            ln_x.push(lx);
        }
        if z.len() < 16 {
            return Err(FsoError::domain(format!(
                "gamma-gamma quantile table degenerate for alpha={alpha}, beta={beta}"
            )));
        }
        Ok(GammaGammaQuantile { z, ln_x })
    }

    /// Intensity whose CDF equals `Φ(z)`.
    pub fn from_normal(&self, z: f64) -> f64 {
        let n = self.z.len();
        let i = match self.z.partition_point(|&v| v <= z) {
            0 => 1,
            i if i >= n => n - 1,
            i => i,
        };
        let (z0, z1) = (self.z[i - 1], self.z[i]);
        let t = (z - z0) / (z1 - z0);
        (self.ln_x[i - 1] + t * (self.ln_x[i] - self.ln_x[i - 1])).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let lx = x.ln();
        let n = self.ln_x.len();
        let i = match self.ln_x.partition_point(|&v| v <= lx) {
            0 => return normal_cdf(self.z[0]),
            i if i >= n => return normal_cdf(self.z[n - 1]),
            i => i,
        };
        let t = (lx - self.ln_x[i - 1]) / (self.ln_x[i] - self.ln_x[i - 1]);
        normal_cdf(self.z[i - 1] + t * (self.z[i] - self.z[i - 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub sample_rate_hz: f64,
    pub seed: u64,
    /// Target coherence time; 0 when unknown (e.g. imported from CSV).
    pub coherence_time_s: f64,
    pub gains: Vec<f64>,
}

impl ChannelTrace {
    /// A trace of `len` unit gains.
    pub fn constant(sample_rate_hz: f64, len: usize) -> Self {
        ChannelTrace {
            sample_rate_hz,
            seed: 0,
            coherence_time_s: 0.0,
            gains: vec![1.0; len],
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.gains.len() as f64 / self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Zero-order-hold gain at time `t_s`.
    pub fn gain_at(&self, t_s: f64) -> Result<f64> {
        let idx = (t_s * self.sample_rate_hz).floor();
        if idx < 0.0 || idx as usize >= self.gains.len() {
            return Err(FsoError::TraceTooShort {
                needed: idx.max(0.0) as usize,
                available: self.gains.len(),
            });
        }
        Ok(self.gains[idx as usize])
    }

    /// Disturbance hook: multiplies every gain by `f(t)`, e.g. a pointing-jitter
    /// loss profile produced by the tracking simulation.
    pub fn fold_gain<F: Fn(f64) -> f64>(&mut self, f: F) {
        let rate = self.sample_rate_hz;
        for (i, g) in self.gains.iter_mut().enumerate() {
            *g = (*g * f(i as f64 / rate)).max(0.0);
        }
    }
}

/// Chunked trace generator; [`generate_trace`] collects it in memory, callers
/// needing longer traces iterate [`TraceGenerator::chunks`].
#[derive(Debug, Clone)]
pub struct TraceGenerator {
    process: GaussianProcess,
    marginal: Marginal,
    sample_rate_hz: f64,
    coherence_time_s: f64,
    len: u64,
    seed: u64,
}

impl TraceGenerator {
    pub fn new(
        model: &FadingModel,
        coherence_time_s: f64,
        sample_rate_hz: f64,
        duration_s: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !(duration_s > 0.0) || !(coherence_time_s > 0.0) {
            return Err(FsoError::domain(
                "trace generation needs rate > 0, duration > 0 and coherence time > 0",
            ));
        }
        let marginal = Marginal::new(model)?;
        let len = (sample_rate_hz * duration_s - 1e-9).ceil().max(1.0) as u64;
        let process = GaussianProcess::new(
            coherence_time_s,
            1.0 / sample_rate_hz,
            derive_seed(seed, domain::TRACE),
        )?;
        Ok(TraceGenerator {
            process,
            marginal,
            sample_rate_hz,
            coherence_time_s,
            len,
            seed,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_chunks(&self) -> u64 {
        self.len.div_ceil(TRACE_CHUNK as u64)
    }

    /// Gains for chunk `index`.
    pub fn chunk(&self, index: u64) -> Vec<f64> {
        let start = index * TRACE_CHUNK as u64;
        let end = (start + TRACE_CHUNK as u64).min(self.len);
        if start >= end {
            return Vec::new();
        }
        if matches!(self.marginal, Marginal::Constant) {
            return vec![1.0; (end - start) as usize];
        }
        self.process
            .samples(start, (end - start) as usize)
            .into_iter()
            .map(|z| self.marginal.transform(z))
            .collect()
    }

    pub fn chunks(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.n_chunks()).map(move |i| self.chunk(i))
    }

    pub fn collect(&self, max_samples: u64) -> Result<ChannelTrace> {
        if self.len > max_samples {
            return Err(FsoError::TraceTooLong {
                requested: self.len,
                budget: max_samples,
            });
        }
        let chunks: Vec<Vec<f64>> = (0..self.n_chunks())
            .into_par_iter()
            .map(|i| self.chunk(i))
            .collect();
        Ok(ChannelTrace {
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
            coherence_time_s: self.coherence_time_s,
            gains: chunks.concat(),
        })
    }
}

/// Generate a unit-mean fading trace of `duration_s` at `sample_rate_hz`.
pub fn generate_trace(
    model: &FadingModel,
    coherence_time_s: f64,
    sample_rate_hz: f64,
    duration_s: f64,
    seed: u64,
) -> Result<ChannelTrace> {
    TraceGenerator::new(model, coherence_time_s, sample_rate_hz, duration_s, seed)?
        .collect(DEFAULT_MAX_SAMPLES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub samples: usize,
    pub mean: f64,
    /// Empirical scintillation index var/mean².
    pub scintillation_index: f64,
    /// Coherence time from the autocorrelation half-power lag; `None` when the
    /// trace is constant or too short for the correlation to decay.
    pub coherence_time_s: Option<f64>,
}

pub fn trace_stats(gains: &[f64], sample_rate_hz: f64) -> Result<TraceStats> {
    if gains.len() < MIN_STATS_SAMPLES {
        return Err(FsoError::TooShort {
            needed: MIN_STATS_SAMPLES,
            got: gains.len(),
        });
    }
    let n = gains.len() as f64;
    let mean = gains.iter().sum::<f64>() / n;
    let var = gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    let scint = if mean > 0.0 { var / (mean * mean) } else { 0.0 };
    let coherence = if var > 0.0 {
        half_power_lag(gains).map(|lag| lag / sample_rate_hz / std::f64::consts::LN_2.sqrt())
    } else {
        None
    };
    Ok(TraceStats {
        samples: gains.len(),
        mean,
        scintillation_index: scint,
        coherence_time_s: coherence,
    })
}

/// Shortest trace, in target coherence times, for which a coherence
/// estimate is reported.
pub const MIN_COHERENCE_SPAN: f64 = 10.0;

/// [`trace_stats`] for a whole trace. The coherence estimate is dropped when
/// the trace spans fewer than [`MIN_COHERENCE_SPAN`] target coherence times.
pub fn trace_stats_of(trace: &ChannelTrace) -> Result<TraceStats> {
    let mut stats = trace_stats(&trace.gains, trace.sample_rate_hz)?;
    if trace.coherence_time_s > 0.0 && trace.duration_s() < MIN_COHERENCE_SPAN * trace.coherence_time_s {
        stats.coherence_time_s = None;
    }
    Ok(stats)
}

/// Normalised autocorrelation of `x` (biased estimator) for lags `0..max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let r0 = buf[0].re;
    if r0 <= 0.0 {
        return vec![1.0; max_lag.min(n)];
    }
    buf.iter().take(max_lag.min(n)).map(|c| c.re / r0).collect()
}

/// Fractional lag (in samples) where the autocorrelation first reaches 0.5.
fn half_power_lag(x: &[f64]) -> Option<f64> {
    let acf = autocorrelation(x, x.len() / 2);
    acf.windows(2).enumerate().find_map(|(i, w)| {
        (w[1] <= 0.5).then(|| i as f64 + (w[0] - 0.5) / (w[0] - w[1]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn ks_against<F: Fn(f64) -> f64>(mut xs: Vec<f64>, cdf: F) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn index_zero_and_weak_regime() {
        assert_eq!(scintillation_index(0.0).unwrap(), 0.0);
        let s = scintillation_index(0.04).unwrap();
        assert!((s - 0.04).abs() / 0.04 < 0.1, "{s}");
        let tiny = scintillation_index(1e-6).unwrap();
        assert!((tiny / 1e-6 - 1.0).abs() < 1e-3);
        assert!(scintillation_index(-1.0).is_err());
    }

    #[test]
    fn short_trace_has_no_coherence_estimate() {
        let model = FadingModel::from_rytov(FadingKind::LogNormal, 0.2).unwrap();
        let short = generate_trace(&model, 0.1, 1000.0, 0.5, 3).unwrap();
        assert_eq!(trace_stats_of(&short).unwrap().coherence_time_s, None);
        let long = generate_trace(&model, 0.01, 1000.0, 20.0, 3).unwrap();
        let tau = trace_stats_of(&long).unwrap().coherence_time_s.unwrap();
        assert!((tau / 0.01 - 1.0).abs() < 0.2, "{tau}");
    }

    #[test]
    fn index_saturates() {
        let s = scintillation_index(100.0).unwrap();
        assert!(s > 0.5 && s < 1.5, "{s}");
    }

    #[test]
    fn gamma_gamma_at_unit_rytov() {
        // Direct evaluation of the two Andrews terms at σ_R² = 1:
        // large-scale 0.49/(2.11)^{7/6}, small-scale 0.51/(1.69)^{5/6}.
        let large = 0.49 / 2.11f64.powf(7.0 / 6.0);
        let small = 0.51 / 1.69f64.powf(5.0 / 6.0);
        let (a, b) = gamma_gamma_params(1.0).unwrap();
        assert!((a - 1.0 / (large.exp() - 1.0)).abs() < 1e-12);
        assert!((b - 1.0 / (small.exp() - 1.0)).abs() < 1e-12);
        // Frozen: α ≈ 4.3939, β ≈ 2.5636
        assert!((a - 4.3939).abs() < 1e-3 && (b - 2.5636).abs() < 1e-3, "{a} {b}");
    }

    #[test]
    fn gamma_gamma_consistent_with_index() {
        for r in [0.01, 0.1, 0.5, 1.0, 3.0, 10.0, 50.0] {
            let (a, b) = gamma_gamma_params(r).unwrap();
            let implied = 1.0 / a + 1.0 / b + 1.0 / (a * b);
            let s = scintillation_index(r).unwrap();
            assert!((implied - s).abs() / s < 1e-6);
        }
    }

    #[test]
    fn gamma_gamma_beta_tends_to_one() {
        let (_, b) = gamma_gamma_params(100.0).unwrap();
        assert!(b > 1.0 && b < 1.3, "{b}");
        assert!(gamma_gamma_params(0.0).is_err());
    }

    #[test]
    fn coherence_time_scaling() {
        let g = presets::clear().geometry;
        let t = coherence_time(&g, 1.0).unwrap();
        assert!((t - (1550e-9f64 * 2e4).sqrt()).abs() < 1e-15);
        let t6 = coherence_time(&g, 6.0).unwrap();
        assert!((t6 - t / 6.0).abs() < 1e-15);
        let mut g4 = g.clone();
        g4.distance_m *= 4.0;
        assert!((coherence_time(&g4, 1.0).unwrap() - 2.0 * t).abs() < 1e-12);
        assert!(coherence_time(&g, 0.0).is_err());
    }

    #[test]
    fn zero_index_gives_constant_trace() {
        let t = generate_trace(&FadingModel::log_normal(0.0), 0.01, 1000.0, 2.0, 5).unwrap();
        assert_eq!(t.len(), 2000);
        assert!(t.gains.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn lognormal_variance_matches_target() {
        let t = generate_trace(&FadingModel::log_normal(0.1), 0.002, 1000.0, 1000.0, 9).unwrap();
        assert_eq!(t.len(), 1_000_000);
        let s = trace_stats(&t.gains, t.sample_rate_hz).unwrap();
        assert!((s.mean - 1.0).abs() < 0.02);
        let var = s.scintillation_index * s.mean * s.mean;
        assert!((var - 0.1).abs() / 0.1 < 0.05, "{var}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = FadingModel::gamma_gamma(4.0, 2.0);
        let a = generate_trace(&m, 0.05, 1000.0, 100.0, 77).unwrap();
        let b = generate_trace(&m, 0.05, 1000.0, 100.0, 77).unwrap();
        assert_eq!(a.gains, b.gains);
        let c = generate_trace(&m, 0.05, 1000.0, 100.0, 78).unwrap();
        assert_ne!(a.gains, c.gains);
    }

    #[test]
    fn independent_of_worker_count() {
        let m = FadingModel::log_normal(0.3);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| generate_trace(&m, 0.01, 1000.0, 300.0, 3).unwrap())
        };
        assert_eq!(run(1).gains, run(4).gains);
    }

    #[test]
    fn streaming_chunks_match_collected() {
        let m = FadingModel::log_normal(0.2);
        let g = TraceGenerator::new(&m, 0.01, 1000.0, 200.0, 1).unwrap();
        let streamed: Vec<f64> = g.chunks().flatten().collect();
        assert_eq!(streamed, g.collect(u64::MAX).unwrap().gains);
        assert!(matches!(g.collect(10), Err(FsoError::TraceTooLong { .. })));
    }

    #[test]
    fn gamma_gamma_marginal_matches_product_of_gammas() {
        let (a, b) = (3.0, 1.8);
        let table = GammaGammaQuantile::new(a, b).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let ga = rand_distr::Gamma::new(a, 1.0 / a).unwrap();
        let gb = rand_distr::Gamma::new(b, 1.0 / b).unwrap();
        let draws: Vec<f64> = (0..200_000)
            .map(|_| ga.sample(&mut rng) * gb.sample(&mut rng))
            .collect();
        let ks = ks_against(draws, |x| table.cdf(x));
        assert!(ks < 0.006, "{ks}");
    }

    #[test]
    fn gamma_gamma_quantile_round_trip() {
        let table = GammaGammaQuantile::new(5.0, 2.0).unwrap();
        for z in [-4.0, -1.0, 0.0, 0.7, 3.0] {
            let x = table.from_normal(z);
            assert!((table.cdf(x) - normal_cdf(z)).abs() < 1e-6);
        }
    }

    #[test]
    fn stats_of_constant_and_concatenated() {
        let s = trace_stats(&[1.0; 500], 10.0).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.scintillation_index, 0.0);
        assert_eq!(s.coherence_time_s, None);
        assert!(matches!(trace_stats(&[1.0; 99], 10.0), Err(FsoError::TooShort { .. })));

        let t = generate_trace(&FadingModel::log_normal(0.2), 0.01, 1000.0, 10.0, 2).unwrap();
        let single = trace_stats(&t.gains, 1000.0).unwrap();
        let doubled = [t.gains.clone(), t.gains.clone()].concat();
        let double = trace_stats(&doubled, 1000.0).unwrap();
        assert!((single.mean - double.mean).abs() < 1e-12);
    }

    #[test]
    fn gain_lookup_is_zero_order_hold() {
        let t = ChannelTrace {
            sample_rate_hz: 10.0,
            seed: 0,
            coherence_time_s: 0.0,
            gains: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(t.gain_at(0.0).unwrap(), 1.0);
        assert_eq!(t.gain_at(0.15).unwrap(), 2.0);
        assert!(t.gain_at(0.31).is_err());
    }

    #[test]
    fn fold_gain_applies_hook() {
        let mut t = ChannelTrace::constant(100.0, 10);
        t.fold_gain(|time| if time < 0.05 { 0.5 } else { 1.0 });
        assert_eq!(&t.gains[..5], &[0.5; 5]);
        assert_eq!(&t.gains[5..], &[1.0; 5]);
    }
}
