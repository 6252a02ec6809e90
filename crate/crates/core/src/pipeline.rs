//! End-to-end emulated transmission: weather and geometry to losses, a
//! fading trace, the PAM-4 modem and BER reports.
//!
//! Symbols are processed in fixed blocks of [`BLOCK_SYMBOLS`]. Every random
//! stream of a block is derived from `(seed, block index)` and block results
//! are merged in index order, so reports do not depend on the worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atmosphere::{total_atmospheric_loss, LossBreakdown};
use crate::channel_trace::{
    coherence_time, trace_stats_of, ChannelTrace, FadingKind, FadingModel, TraceGenerator, TraceStats,
    MIN_STATS_SAMPLES,
};
use crate::config::{FadingSelection, NoiseMode, SimConfig};
use crate::error::{FsoError, Result, StageExt};
use crate::linkbudget::{received_power_dbm, LinkBudget};
use crate::modem::{
    apply_channel_block, bits_to_bytes, bytes_to_bits, decide, integrate_symbols, level_moments,
    map_symbols, symbols_to_bits, BerReport, BitErrorCount, Pam4Config, Thresholds,
};
use crate::numeric::{chunk_rng, derive_seed, domain, q_function, Moments};
use crate::pat::run_tracking_loop;

/// Symbols per processing block.
pub const BLOCK_SYMBOLS: usize = 1 << 16;

/// Largest number of trace samples the noise calibration evaluates.
const CALIBRATION_SAMPLES: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSummary {
    pub input: PathBuf,
    pub output: PathBuf,
    pub bytes: u64,
    pub byte_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub losses: LossBreakdown,
    pub budget: LinkBudget,
    /// `None` for a unit-gain channel.
    pub fading: Option<FadingModel>,
    pub coherence_time_s: Option<f64>,
    pub trace_samples: u64,
    /// `None` when the trace is shorter than the statistics minimum.
    pub trace: Option<TraceStats>,
    pub noise_std: f64,
    pub symbols: u64,
    /// The bit stream had odd length and a zero bit was appended.
    pub padded: bool,
    /// Blocks whose adaptive thresholds fell back to the nominal ones.
    pub threshold_fallbacks: u64,
    pub ber: BerReport,
    pub payload: Option<PayloadSummary>,
    pub wall_clock_s: Option<f64>,
    pub config: SimConfig,
}

impl RunReport {
    pub const CSV_HEADER: [&'static str; 8] = [
        "scenario",
        "l_total_db",
        "p_r_dbm",
        "rytov_variance",
        "noise_std",
        "bit_errors",
        "ber_counted",
        "ber_estimated",
    ];

    pub fn csv_row(&self) -> [String; 8] {
        [
            self.scenario.clone(),
            self.losses.l_total_db.to_string(),
            self.budget.p_r_dbm.to_string(),
            self.losses.rytov_variance.to_string(),
            self.noise_std.to_string(),
            self.ber.bit_errors.to_string(),
            self.ber.ber_counted.to_string(),
            self.ber.ber_estimated.map(|v| v.to_string()).unwrap_or_default(),
        ]
    }
}

/// Bits feeding the modem.
enum Source<'a> {
    /// Seeded random bits, `2·symbols` of them.
    Random { symbols: u64 },
    Payload(&'a [bool]),
}

impl Source<'_> {
    fn n_bits(&self) -> u64 {
        match self {
            Source::Random { symbols } => 2 * symbols,
            Source::Payload(bits) => bits.len() as u64,
        }
    }

    fn n_symbols(&self) -> u64 {
        self.n_bits().div_ceil(2)
    }

    fn block_bits(&self, block: usize, seed: u64) -> Vec<bool> {
        let start = 2 * block as u64 * BLOCK_SYMBOLS as u64;
        let end = (start + 2 * BLOCK_SYMBOLS as u64).min(self.n_bits());
        match self {
            Source::Random { .. } => {
                let mut rng = chunk_rng(derive_seed(seed, domain::PAYLOAD), block as u64);
                let n = (end - start) as usize;
                let mut bits = Vec::with_capacity(n);
                while bits.len() < n {
                    let word = rng.next_u64();
                    bits.extend((0..64).map(|i| (word >> i) & 1 == 1).take(n - bits.len()));
                }
                bits
            }
            Source::Payload(all) => all[start as usize..end as usize].to_vec(),
        }
    }
}

struct BlockResult {
    errors: u64,
    moments: [Moments; 4],
    fallback: bool,
    rx: Option<Vec<bool>>,
}

struct Transmission {
    count: BitErrorCount,
    moments: [Moments; 4],
    fallbacks: u64,
    rx: Option<Vec<bool>>,
}

#[allow(clippy::too_many_arguments)]
fn run_block(
    block: usize,
    source: &Source,
    modem: &Pam4Config,
    trace: Option<&ChannelTrace>,
    noise_std: f64,
    thresholds: Thresholds,
    seed: u64,
    keep_rx: bool,
) -> Result<BlockResult> {
    let bits = source.block_bits(block, seed);
    let symbols = map_symbols(&bits, modem);
    let sps = modem.samples_per_symbol;
    let samples: Vec<f64> = symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(modem.levels[s as usize], sps))
        .collect();
    let first = (block * BLOCK_SYMBOLS * sps) as u64;
    let rx = apply_channel_block(&samples, first, modem.sample_rate_hz(), trace, noise_std, seed)?;
    let values = integrate_symbols(&rx, sps);
    let (decided, fallback) = match decide(&values, thresholds) {
        Ok(d) => (d, false),
        Err(FsoError::DegenerateClusters { .. }) => (
            decide(&values, Thresholds::Fixed { thresholds: modem.nominal_thresholds() })?,
            true,
        ),
        Err(e) => return Err(e),
    };
    let mut rx_bits = symbols_to_bits(&decided, modem);
    rx_bits.truncate(bits.len());
    let errors = bits.iter().zip(&rx_bits).filter(|(a, b)| a != b).count() as u64;
    Ok(BlockResult {
        errors,
        moments: level_moments(&values, &symbols)?,
        fallback,
        rx: keep_rx.then_some(rx_bits),
    })
}

fn transmit(
    source: &Source,
    modem: &Pam4Config,
    trace: Option<&ChannelTrace>,
    noise_std: f64,
    thresholds: Thresholds,
    seed: u64,
    keep_rx: bool,
) -> Result<Transmission> {
    modem.validate()?;
    if !(noise_std >= 0.0) {
        return Err(FsoError::domain("noise_std must be >= 0"));
    }
    let n_blocks = source.n_symbols().div_ceil(BLOCK_SYMBOLS as u64) as usize;
    let blocks: Vec<BlockResult> = (0..n_blocks)
        .into_par_iter()
        .map(|b| run_block(b, source, modem, trace, noise_std, thresholds, seed, keep_rx))
        .collect::<Result<_>>()?;
    let mut moments = [Moments::default(); 4];
    let mut errors = 0;
    let mut fallbacks = 0;
    let mut rx = keep_rx.then(|| Vec::with_capacity(source.n_bits() as usize));
    for b in blocks {
        errors += b.errors;
        fallbacks += b.fallback as u64;
        for (m, bm) in moments.iter_mut().zip(&b.moments) {
            m.merge(bm);
        }
        if let (Some(all), Some(part)) = (rx.as_mut(), b.rx) {
            all.extend(part);
        }
    }
    let bits = source.n_bits();
    Ok(Transmission {
        count: BitErrorCount {
            bits,
            errors,
            ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
        },
        moments,
        fallbacks,
        rx,
    })
}

/// Random-payload transmission over a unit-gain channel with additive white
/// Gaussian noise, sliced at the nominal thresholds.
pub fn simulate_awgn(modem: &Pam4Config, n_symbols: u64, noise_std: f64, seed: u64) -> Result<BerReport> {
    let t = transmit(
        &Source::Random { symbols: n_symbols },
        modem,
        None,
        noise_std,
        Thresholds::Fixed { thresholds: modem.nominal_thresholds() },
        seed,
        false,
    )?;
    Ok(BerReport::new(t.count, &t.moments))
}

/// Expected BER of the nominal-threshold receiver when each symbol sees a
/// gain drawn uniformly from `gains`.
fn faded_ber(levels: &[f64; 4], gains: &[f64], noise_std: f64) -> f64 {
    let total: f64 = gains
        .iter()
        .map(|&h| {
            levels
                .windows(2)
                .map(|w| q_function(h * (w[1] - w[0]) / (2.0 * noise_std)))
                .sum::<f64>()
        })
        .sum();
    0.25 * total / gains.len() as f64
}

/// Noise standard deviation for a Q-factor target over a fading trace.
///
/// The target BER is that of a static eye whose narrowest opening has
/// Q-factor `q`; the returned noise level makes the BER averaged over the
/// trace gains equal to it (bisection to 1e-6 relative).
pub fn calibrate_noise_q(levels: &[f64; 4], gains: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(FsoError::Calibration("Q target must be > 0".into()));
    }
    let gaps: Vec<f64> = levels.windows(2).map(|w| w[1] - w[0]).collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let target = 0.25 * gaps.iter().map(|g| q_function(q * g / min_gap)).sum::<f64>();
    let stride = gains.len().div_ceil(CALIBRATION_SAMPLES).max(1);
    let sample: Vec<f64> = gains.iter().step_by(stride).copied().collect();
    if sample.is_empty() || !sample.iter().any(|&h| h > 0.0) {
        return Err(FsoError::Calibration("fading trace has no positive gain".into()));
    }
    let mut lo = 0.0;
    let mut hi = levels[3] - levels[0];
    while faded_ber(levels, &sample, hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(FsoError::Calibration("no noise level reaches the Q target".into()));
        }
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if faded_ber(levels, &sample, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fading model for the configured selection; `None` means unit gain.
pub fn select_fading(config: &SimConfig, rytov: f64) -> Result<Option<FadingModel>> {
    let kind = match config.run.fading {
        FadingSelection::None => return Ok(None),
        FadingSelection::LogNormal => FadingKind::LogNormal,
        FadingSelection::GammaGamma => FadingKind::GammaGamma,
        FadingSelection::Auto if rytov < config.run.lognormal_max_rytov => FadingKind::LogNormal,
        FadingSelection::Auto => FadingKind::GammaGamma,
    };
    FadingModel::from_rytov(kind, rytov).map(Some)
}

fn run(config: &SimConfig, source: &Source, keep_rx: bool) -> Result<(RunReport, Option<Vec<bool>>)> {
    let started = Instant::now();
    config.validate().stage("config")?;
    let seed = config.run.seed;
    let losses = total_atmospheric_loss(&config.weather, &config.geometry, &config.atmosphere)
        .stage("atmosphere")?;
    let budget = received_power_dbm(&config.optics, &config.geometry, &losses).stage("linkbudget")?;
    let fading = select_fading(config, losses.rytov_variance).stage("fading")?;

    let n_symbols = source.n_symbols();
    if n_symbols == 0 {
        return Err(FsoError::domain("nothing to transmit")).stage("modem");
    }
    let duration_s = n_symbols as f64 / config.modem.symbol_rate_hz;
    let rate = config.run.trace_rate_hz;
    let (trace, coherence) = match &fading {
        Some(model) => {
            let tau = coherence_time(&config.geometry, config.weather.wind_speed_mps).stage("coherence_time")?;
            let trace = TraceGenerator::new(model, tau, rate, duration_s, seed)
                .and_then(|g| g.collect(config.run.max_trace_samples))
                .stage("trace")?;
            (trace, Some(tau))
        }
        None => {
            let len = (rate * duration_s - 1e-9).ceil().max(1.0) as usize;
            (ChannelTrace::constant(rate, len), None)
        }
    };
    let stats = if trace.len() >= MIN_STATS_SAMPLES {
        Some(trace_stats_of(&trace).stage("trace")?)
    } else {
        None
    };

    let noise_std = match config.run.noise {
        NoiseMode::QTarget { q } => calibrate_noise_q(&config.modem.levels, &trace.gains, q).stage("calibration")?,
        NoiseMode::Physical => config.modem.levels[3] * 10f64.powf(-budget.snr_db / 10.0),
        NoiseMode::Fixed { std } if std >= 0.0 => std,
        NoiseMode::Fixed { .. } => {
            return Err(FsoError::InvalidValue {
                key: "run.noise.std".into(),
                reason: "must be >= 0".into(),
            })
            .stage("calibration")
        }
    };

    let tx = transmit(source, &config.modem, Some(&trace), noise_std, config.run.thresholds, seed, keep_rx)
        .stage("modem")?;
    let report = RunReport {
        scenario: config.scenario.clone(),
        losses,
        budget,
        fading,
        coherence_time_s: coherence,
        trace_samples: trace.len() as u64,
        trace: stats,
        noise_std,
        symbols: n_symbols,
        padded: source.n_bits() % 2 == 1,
        threshold_fallbacks: tx.fallbacks,
        ber: BerReport::new(tx.count, &tx.moments),
        payload: None,
        wall_clock_s: Some(started.elapsed().as_secs_f64()),
        config: config.clone(),
    };
    Ok((report, tx.rx))
}

/// Random-payload end-to-end run of `config.run.symbols` symbols.
pub fn run_endtoend(config: &SimConfig) -> Result<RunReport> {
    run(config, &Source::Random { symbols: config.run.symbols }, false).map(|(r, _)| r)
}

/// Transmit the bytes of `path_in` and write what the receiver recovers to
/// `path_out`.
pub fn payload_roundtrip(path_in: &Path, config: &SimConfig, path_out: &Path) -> Result<RunReport> {
    let bytes = std::fs::read(path_in).map_err(|e| FsoError::io(path_in, e)).stage("payload")?;
    let bits = bytes_to_bits(&bytes);
    let (mut report, rx) = run(config, &Source::Payload(&bits), true)?;
    let out = bits_to_bytes(&rx.expect("receiver bits kept"));
    std::fs::write(path_out, &out).map_err(|e| FsoError::io(path_out, e)).stage("payload")?;
    report.payload = Some(PayloadSummary {
        input: path_in.to_path_buf(),
        output: path_out.to_path_buf(),
        bytes: bytes.len() as u64,
        byte_errors: bytes.iter().zip(&out).filter(|(a, b)| a != b).count() as u64,
    });
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Link,
    Pat,
}

impl SweepMode {
    pub fn for_axis(axis: &str) -> Self {
        if axis.starts_with("pat.") {
            SweepMode::Pat
        } else {
            SweepMode::Link
        }
    }
}

/// One run per value of the numeric config key `axis`, all with the base
/// seed, written as CSV. Axes under `pat.` run the tracking loop instead of
/// a transmission.
pub fn scenario_sweep<W: std::io::Write>(base: &SimConfig, axis: &str, values: &[f64], out: W) -> Result<()> {
    let valid = base.numeric_keys();
    if !valid.iter().any(|k| k == axis) {
        return Err(FsoError::UnknownAxis {
            axis: axis.into(),
            valid: valid.join(", "),
        });
    }
    let mode = SweepMode::for_axis(axis);
    let mut w = csv::Writer::from_writer(out);
    match mode {
        SweepMode::Link => {
            let mut header = vec!["value"];
            header.extend(RunReport::CSV_HEADER);
            w.write_record(&header)?;
        }
        SweepMode::Pat => {
            w.write_record(["value", "m", "residual_rms_m", "residual_rms_x_m", "residual_max_m"])?;
        }
    }
    for &v in values {
        let mut cfg = base.clone();
        cfg.set(&format!("{axis}={v}"))?;
        match mode {
            SweepMode::Link => {
                let r = run_endtoend(&cfg)?;
                let mut row = vec![v.to_string()];
                row.extend(r.csv_row());
                w.write_record(&row)?;
            }
            SweepMode::Pat => {
                let s = run_tracking_loop(&cfg.pat, cfg.run.seed).stage("pat")?.summary;
                w.write_record([
                    v.to_string(),
                    s.m.to_string(),
                    s.residual_rms_m.to_string(),
                    s.residual_rms_x_m.to_string(),
                    s.residual_max_m.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
