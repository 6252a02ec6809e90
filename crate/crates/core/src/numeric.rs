//! Small numerical helpers shared across the simulator: adaptive quadrature,
//! Gaussian tail functions, seed derivation and streaming moments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FsoError, Result};

const MAX_SIMPSON_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance `rel_tol`.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Coarse scale estimate so the tolerance is relative to the integral, not per panel.
    let scale = {
        let n = 64;
        let h = (b - a) / n as f64;
        (0..=n).map(|i| f(a + i as f64 * h).abs()).sum::<f64>() * h.abs()
    };
    let tol = (rel_tol * scale.max(whole.abs())).max(f64::MIN_POSITIVE);
    let mut failed = false;
    let value = simpson_step(&f, a, b, fa, fm, fb, whole, tol, MAX_SIMPSON_DEPTH, &mut failed);
    if failed || !value.is_finite() {
        return Err(FsoError::Integration { a, b, tol: rel_tol });
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    failed: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *failed = true;
        return left + right;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, failed)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, failed)
}

/// Gaussian tail probability Q(x) = P(Z > x).
pub fn q_function(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    q_function(-x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Inverse of [`q_function`] on (0, 1).
pub fn q_inverse(p: f64) -> f64 {
    -normal_quantile(p)
}

/// Fraction of a 1-D Gaussian of standard deviation `std` centred at `mean`
/// that falls inside `[lo, hi]`.
pub fn gaussian_interval_fraction(lo: f64, hi: f64, mean: f64, std: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let s = std * std::f64::consts::SQRT_2;
    (0.5 * (erf((hi - mean) / s) - erf((lo - mean) / s))).max(0.0)
}

/// Fraction of a circular Gaussian beam (1/e² intensity radius `radius`) centred
/// at `center` landing on the axis-aligned rectangle `[x0, x1] × [y0, y1]`.
pub fn gaussian_beam_overlap(rect: [f64; 4], center: (f64, f64), radius: f64) -> f64 {
    let [x0, x1, y0, y1] = rect;
    let std = radius / 2.0;
    gaussian_interval_fraction(x0, x1, center.0, std) * gaussian_interval_fraction(y0, y1, center.1, std)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a named purpose (`domain`) from a master seed.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(domain.wrapping_mul(0xD605_BBB5_8C8A_BE2D)))
}

/// Generator for chunk `chunk` of a stream. Output depends only on `(seed, chunk)`,
/// never on how chunks are scheduled across workers.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Seed domains used by the simulator's random streams.
pub mod domain {
    pub const TRACE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const PAYLOAD: u64 = 3;
    pub const QD_NOISE: u64 = 4;
    pub const DISTURBANCE: u64 = 5;
    pub const STATIC_CHANNEL: u64 = 6;
    pub const SWEEP: u64 = 7;
}

/// Mergeable running mean / variance (Welford, Chan et al. for merges).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}
