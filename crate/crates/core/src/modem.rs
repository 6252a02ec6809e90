//! PAM-4 intensity modem with statistics-based BER estimation.
//!
//! Symbols are rectangular pulses of `samples_per_symbol` samples. The
//! receiver integrates and dumps each symbol, then slices against three
//! thresholds that are either fixed or estimated per block by 1-D k-means.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_trace::ChannelTrace;
use crate::error::{FsoError, Result};
use crate::numeric::{chunk_rng, derive_seed, domain, q_function, Moments};

/// Samples per noise stream chunk in [`apply_channel`].
pub const CHANNEL_BLOCK: usize = 1 << 16;

const KMEANS_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pam4Config {
    pub symbol_rate_hz: f64,
    pub levels: [f64; 4],
    pub gray_mapping: bool,
    pub samples_per_symbol: usize,
}

impl Default for Pam4Config {
    /// 4 Gb/s line rate: 2 GBd, equally spaced levels in [0, 1].
    fn default() -> Self {
        Pam4Config {
            symbol_rate_hz: 2e9,
            levels: [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            gray_mapping: true,
            samples_per_symbol: 1,
        }
    }
}

impl Pam4Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate_hz > 0.0) {
            return Err(FsoError::domain("symbol_rate_hz must be > 0"));
        }
        if self.samples_per_symbol == 0 {
            return Err(FsoError::domain("samples_per_symbol must be >= 1"));
        }
        if self.levels[0] < 0.0 || self.levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FsoError::domain(
                "PAM-4 levels must be nonnegative and strictly increasing",
            ));
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.symbol_rate_hz * self.samples_per_symbol as f64
    }

    /// Midpoints between adjacent levels.
    pub fn nominal_thresholds(&self) -> [f64; 3] {
        midpoints(&self.levels)
    }

    fn symbol_for(&self, b0: bool, b1: bool) -> u8 {
        match (self.gray_mapping, b0, b1) {
            (_, false, false) => 0,
            (_, false, true) => 1,
            (true, true, true) => 2,
            (true, true, false) => 3,
            (false, true, false) => 2,
            (false, true, true) => 3,
        }
    }

    fn bits_for(&self, symbol: u8) -> (bool, bool) {
        match (self.gray_mapping, symbol) {
            (_, 0) => (false, false),
            (_, 1) => (false, true),
            (true, 2) => (true, true),
            (true, _) => (true, false),
            (false, 2) => (true, false),
            (false, _) => (true, true),
        }
    }
}

fn midpoints(levels: &[f64; 4]) -> [f64; 3] {
    [
        0.5 * (levels[0] + levels[1]),
        0.5 * (levels[1] + levels[2]),
        0.5 * (levels[2] + levels[3]),
    ]
}

/// Modulated waveform plus the bookkeeping needed to undo padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Pam4Signal {
    pub samples: Vec<f64>,
    /// Level index (0..=3) of each symbol.
    pub symbols: Vec<u8>,
    pub n_bits: usize,
    /// A trailing zero bit was appended to complete the last symbol.
    pub padded: bool,
}

/// MSB-first bit expansion.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
        .collect()
}

/// MSB-first packing; a trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i))))
        .collect()
}

/// Map bit pairs to level indices (a trailing odd bit is zero-padded).
pub fn map_symbols(bits: &[bool], config: &Pam4Config) -> Vec<u8> {
    bits.chunks(2)
        .map(|pair| config.symbol_for(pair[0], pair.get(1).copied().unwrap_or(false)))
        .collect()
}

pub fn modulate(bits: &[bool], config: &Pam4Config) -> Result<Pam4Signal> {
    config.validate()?;
    let symbols = map_symbols(bits, config);
    let sps = config.samples_per_symbol;
    let samples = symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(config.levels[s as usize], sps))
        .collect();
    Ok(Pam4Signal {
        samples,
        symbols,
        n_bits: bits.len(),
        padded: bits.len() % 2 == 1,
    })
}

/// Impair samples `first_sample..` of a stream: `r_k = H(t_k)·x_k + n_k`.
///
/// `first_sample` must be a multiple of [`CHANNEL_BLOCK`]; the noise of each
/// `CHANNEL_BLOCK`-sample chunk is drawn from a stream derived from
/// `(seed, chunk index)`. Without a trace the channel gain is 1.
pub(crate) fn apply_channel_block(
    samples: &[f64],
    first_sample: u64,
    sample_rate_hz: f64,
    trace: Option<&ChannelTrace>,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    debug_assert_eq!(first_sample % CHANNEL_BLOCK as u64, 0);
    let ratio = trace.map_or(0.0, |t| t.sample_rate_hz / sample_rate_hz);
    let noise_seed = derive_seed(seed, domain::NOISE);
    let mut out = Vec::with_capacity(samples.len());
    for (c, chunk) in samples.chunks(CHANNEL_BLOCK).enumerate() {
        let start = first_sample + (c * CHANNEL_BLOCK) as u64;
        let mut rng = chunk_rng(noise_seed, start / CHANNEL_BLOCK as u64);
        for (i, &x) in chunk.iter().enumerate() {
            let h = match trace {
                Some(t) => {
                    let idx = ((start + i as u64) as f64 * ratio).floor() as usize;
                    *t.gains.get(idx).ok_or(FsoError::TraceTooShort {
                        needed: idx,
                        available: t.gains.len(),
                    })?
                }
                None => 1.0,
            };
            let n: f64 = if noise_std > 0.0 {
                noise_std * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            } else {
                0.0
            };
            out.push(h * x + n);
        }
    }
    Ok(out)
}

/// Pass a modulated waveform through a fading trace (zero-order hold) and
/// additive white Gaussian noise of standard deviation `noise_std`.
pub fn apply_channel(
    samples: &[f64],
    config: &Pam4Config,
    trace: &ChannelTrace,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(noise_std >= 0.0) {
        return Err(FsoError::domain("noise_std must be >= 0"));
    }
    let rate = config.sample_rate_hz();
    let blocks: Vec<Vec<f64>> = samples
        .par_chunks(CHANNEL_BLOCK)
        .enumerate()
        .map(|(b, chunk)| {
            apply_channel_block(chunk, (b * CHANNEL_BLOCK) as u64, rate, Some(trace), noise_std, seed)
        })
        .collect::<Result<_>>()?;
    Ok(blocks.concat())
}

/// Integrate-and-dump: mean of each symbol's samples.
pub fn integrate_symbols(samples: &[f64], samples_per_symbol: usize) -> Vec<f64> {
    if samples_per_symbol <= 1 {
        return samples.to_vec();
    }
    samples
        .chunks(samples_per_symbol)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Thresholds {
    Fixed { thresholds: [f64; 3] },
    /// k-means level estimation over blocks of `block_symbols` symbols
    /// (`None`: the whole stream).
    Adaptive { block_symbols: Option<usize> },
}

/// Decision thresholds at the midpoints of four 1-D k-means clusters.
///
/// Centres start at the medians of the four quartiles of the sorted data;
/// a value equidistant from two centres joins the lower one.
pub fn kmeans_thresholds(values: &[f64]) -> Result<[f64; 3]> {
    if values.is_empty() {
        return Err(FsoError::DegenerateClusters { found: 0 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let mut centers = [1usize, 3, 5, 7].map(|k| sorted[(k * n / 8).min(n - 1)]);
    if centers.windows(2).any(|w| !(w[1] > w[0])) {
        // Skewed symbol mix: start from an even spread over the data range.
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        centers = [0.0, 1.0, 2.0, 3.0].map(|i| lo + (hi - lo) * i / 3.0);
    }
    let mut counts = [0usize; 4];
    for _ in 0..KMEANS_MAX_ITER {
        let th = midpoints(&centers);
        let mut sums = [0.0f64; 4];
        counts = [0; 4];
        for &v in values {
            let c = classify(v, &th) as usize;
            sums[c] += v;
            counts[c] += 1;
        }
        let mut next = centers;
        for c in 0..4 {
            if counts[c] > 0 {
                next[c] = sums[c] / counts[c] as f64;
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    let found = counts.iter().filter(|&&c| c > 0).count();
    if found < 4 || centers.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FsoError::DegenerateClusters { found });
    }
    Ok(midpoints(&centers))
}

#[inline]
fn classify(v: f64, th: &[f64; 3]) -> u8 {
    (v > th[0]) as u8 + (v > th[1]) as u8 + (v > th[2]) as u8
}

/// Slice per-symbol values into level indices.
pub fn decide(symbol_values: &[f64], thresholds: Thresholds) -> Result<Vec<u8>> {
    if symbol_values.is_empty() {
        return Err(FsoError::domain("nothing to demodulate"));
    }
    match thresholds {
        Thresholds::Fixed { thresholds } => {
            Ok(symbol_values.iter().map(|&v| classify(v, &thresholds)).collect())
        }
        Thresholds::Adaptive { block_symbols } => {
            let block = block_symbols.unwrap_or(symbol_values.len()).max(1);
            let parts: Vec<Vec<u8>> = symbol_values
                .par_chunks(block)
                .map(|chunk| {
                    let th = kmeans_thresholds(chunk)?;
                    Ok(chunk.iter().map(|&v| classify(v, &th)).collect())
                })
                .collect::<Result<_>>()?;
            Ok(parts.concat())
        }
    }
}

pub fn symbols_to_bits(symbols: &[u8], config: &Pam4Config) -> Vec<bool> {
    symbols
        .iter()
        .flat_map(|&s| {
            let (a, b) = config.bits_for(s);
            [a, b]
        })
        .collect()
}

/// Recover bits from received samples. The output holds two bits per
/// symbol; callers drop padding using [`Pam4Signal::n_bits`].
pub fn demodulate(samples: &[f64], config: &Pam4Config, thresholds: Thresholds) -> Result<Vec<bool>> {
    config.validate()?;
    let values = integrate_symbols(samples, config.samples_per_symbol);
    let symbols = decide(&values, thresholds)?;
    Ok(symbols_to_bits(&symbols, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitErrorCount {
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
}

pub fn count_ber(tx: &[bool], rx: &[bool]) -> Result<BitErrorCount> {
    if tx.len() != rx.len() {
        return Err(FsoError::LengthMismatch {
            left: tx.len(),
            right: rx.len(),
        });
    }
    let errors = tx.iter().zip(rx).filter(|(a, b)| a != b).count() as u64;
    let bits = tx.len() as u64;
    Ok(BitErrorCount {
        bits,
        errors,
        ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
    })
}

/// Per-level received statistics and eye Q-factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub count: [u64; 4],
    /// `q[i-1] = (μ_i − μ_{i−1}) / (σ_i + σ_{i−1})`, infinite for a noiseless eye.
    pub q: [f64; 3],
}

impl LevelStats {
    pub fn from_moments(moments: &[Moments; 4]) -> Result<Self> {
        if let Some(level) = moments.iter().position(|m| m.count == 0) {
            return Err(FsoError::MissingLevel(level));
        }
        let mean = moments.map(|m| m.mean);
        let std = moments.map(|m| m.std());
        let q = [1, 2, 3].map(|i| {
            let gap = mean[i] - mean[i - 1];
            let spread = std[i] + std[i - 1];
            if spread > 0.0 {
                gap / spread
            } else if gap > 0.0 {
                f64::INFINITY
            } else {
                f64::NAN
            }
        });
        Ok(LevelStats {
            mean,
            std,
            count: moments.map(|m| m.count),
            q,
        })
    }

    /// Signal-to-noise ratio of the eye: variance of the four level means over
    /// the mean per-level noise variance, in dB.
    pub fn snr_db(&self) -> f64 {
        let mu = self.mean.iter().sum::<f64>() / 4.0;
        let signal = self.mean.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / 4.0;
        let noise = self.std.iter().map(|s| s * s).sum::<f64>() / 4.0;
        10.0 * (signal / noise).log10()
    }

    pub fn min_q(&self) -> f64 {
        self.q.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Accumulate per-level moments from labelled per-symbol samples.
pub fn level_moments(values: &[f64], labels: &[u8]) -> Result<[Moments; 4]> {
    if values.len() != labels.len() {
        return Err(FsoError::LengthMismatch {
            left: values.len(),
            right: labels.len(),
        });
    }
    let mut m = [Moments::default(); 4];
    for (&v, &l) in values.iter().zip(labels) {
        let slot = m
            .get_mut(l as usize)
            .ok_or_else(|| FsoError::domain(format!("symbol label {l} is not a PAM-4 level")))?;
        slot.push(v);
    }
    Ok(m)
}

/// Genie-aided eye statistics from per-symbol samples and their transmitted
/// level indices.
pub fn eye_stats(values: &[f64], labels: &[u8]) -> Result<LevelStats> {
    LevelStats::from_moments(&level_moments(values, labels)?)
}

/// BER predicted from the eye statistics: one bit error per adjacent-level
/// symbol error under Gray mapping, `¼·Σ Q(q_i)`.
pub fn estimate_ber_from_stats(stats: &LevelStats) -> Result<f64> {
    let mut sum = 0.0;
    for (i, &q) in stats.q.iter().enumerate() {
        if q.is_nan() {
            return Err(FsoError::domain(format!(
                "eye {} has zero opening and zero spread",
                i + 1
            )));
        }
        sum += q_function(q);
    }
    Ok((0.25 * sum).clamp(0.0, 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub bits_tx: u64,
    pub bit_errors: u64,
    pub ber_counted: f64,
    /// `None` when a level was never sent or an eye is closed with no spread.
    pub ber_estimated: Option<f64>,
    pub level_stats: Option<LevelStats>,
    pub snr_db: Option<f64>,
}

impl BerReport {
    pub fn new(count: BitErrorCount, moments: &[Moments; 4]) -> Self {
        let level_stats = LevelStats::from_moments(moments).ok();
        BerReport {
            bits_tx: count.bits,
            bit_errors: count.errors,
            ber_counted: count.ber,
            ber_estimated: level_stats.as_ref().and_then(|s| estimate_ber_from_stats(s).ok()),
            snr_db: level_stats.as_ref().map(LevelStats::snr_db),
            level_stats,
        }
    }

    pub const CSV_HEADER: [&'static str; 6] =
        ["bits_tx", "bit_errors", "ber_counted", "ber_estimated", "min_q", "snr_db"];

    pub fn csv_row(&self) -> [String; 6] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.bits_tx.to_string(),
            self.bit_errors.to_string(),
            self.ber_counted.to_string(),
            opt(self.ber_estimated),
            opt(self.level_stats.as_ref().map(LevelStats::min_q)),
            opt(self.snr_db),
        ]
    }
}
