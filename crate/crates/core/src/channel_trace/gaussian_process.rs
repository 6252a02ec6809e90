use rand_distr::{Distribution, StandardNormal};

use crate::error::{FsoError, Result};
use crate::numeric::chunk_rng;

/// White-noise values per random-stream chunk.
const NOISE_CHUNK: u64 = 1 << 16;

/// Coarse-grid points per correlation time when the output grid is finer.
const POINTS_PER_TAU: f64 = 32.0;

/// Kernel support in units of the correlation time.
const KERNEL_SPAN_TAU: f64 = 3.0;

/// Stationary zero-mean, unit-variance Gaussian process with autocorrelation
/// `exp(-(t/τ)²)`, sampled on a uniform grid of step `dt`.
///
/// White noise on a coarse grid is filtered by the kernel `exp(-2 t²/τ²)`,
/// whose self-convolution has the target shape. When `τ` spans more than
/// 32 output samples the coarse grid is `τ/32` and output samples are
/// linearly interpolated.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    dt: f64,
    coarse_dt: f64,
    /// Coarse grid coincides with the output grid.
    direct: bool,
    kernel: Vec<f64>,
    half: usize,
    seed: u64,
}

impl GaussianProcess {
    pub fn new(tau: f64, dt: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0) || !(dt > 0.0) || !tau.is_finite() || !dt.is_finite() {
            return Err(FsoError::domain("correlation time and step must be positive"));
        }
        let direct = tau / dt <= POINTS_PER_TAU;
        let coarse_dt = if direct { dt } else { tau / POINTS_PER_TAU };
        let half = (KERNEL_SPAN_TAU * tau / coarse_dt).ceil().max(1.0) as usize;
        let mut kernel: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let t = (i as f64 - half as f64) * coarse_dt;
                (-2.0 * t * t / (tau * tau)).exp()
            })
            .collect();
        let norm = kernel.iter().map(|g| g * g).sum::<f64>().sqrt();
        kernel.iter_mut().for_each(|g| *g /= norm);
        Ok(GaussianProcess {
            dt,
            coarse_dt,
            direct,
            kernel,
            half,
            seed,
        })
    }

    /// White noise `w[start..start + len]`, regenerated from its chunks.
    fn white(&self, start: u64, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let end = start + len as u64;
        let mut chunk = start / NOISE_CHUNK;
        while chunk * NOISE_CHUNK < end {
            let c0 = chunk * NOISE_CHUNK;
            let mut rng = chunk_rng(self.seed, chunk);
            let lo = start.max(c0);
            let hi = end.min(c0 + NOISE_CHUNK);
            // Draw the whole prefix so each value depends only on its position.
            for i in c0..hi {
                let v: f64 = StandardNormal.sample(&mut rng);
                if i >= lo {
                    out.push(v);
                }
            }
            chunk += 1;
        }
        out
    }

    /// Filtered coarse-grid values `z[start..start + len]`.
    fn coarse(&self, start: u64, len: usize) -> Vec<f64> {
        let taps = self.kernel.len();
        let w = self.white(start, len + taps - 1);
        (0..len)
            .map(|j| {
                self.kernel
                    .iter()
                    .zip(&w[j..j + taps])
                    .map(|(g, x)| g * x)
                    .sum()
            })
            .collect()
    }

    /// Output samples `start..start + len` (sample `k` is at time `k·dt`).
    pub fn samples(&self, start: u64, len: usize) -> Vec<f64> {
        if len == 0 {
            return Vec::new();
        }
        if self.direct {
            return self.coarse(start, len);
        }
        let ratio = self.dt / self.coarse_dt;
        let first = (start as f64 * ratio).floor() as u64;
        let last = ((start + len as u64 - 1) as f64 * ratio).floor() as u64 + 1;
        let z = self.coarse(first, (last - first + 1) as usize);
        (start..start + len as u64)
            .map(|k| {
                let x = k as f64 * ratio;
                let j = x.floor();
                let frac = x - j;
                let idx = (j as u64 - first) as usize;
                let a = z[idx];
                let b = z[(idx + 1).min(z.len() - 1)];
                // Rescale so the interpolated value keeps unit variance.
                let rho = (-(self.coarse_dt / self.tau()).powi(2)).exp();
                let var = (1.0 - frac).powi(2) + frac * frac + 2.0 * frac * (1.0 - frac) * rho;
                ((1.0 - frac) * a + frac * b) / var.sqrt()
            })
            .collect()
    }

    fn tau(&self) -> f64 {
        self.coarse_dt * POINTS_PER_TAU
    }

    /// Half-width of the filter kernel in coarse samples.
    pub fn kernel_half_width(&self) -> usize {
        self.half
    }
}
