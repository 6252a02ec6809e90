//! Solar background noise and n×n spatial selection of the receive aperture.
//!
//! Background noise scales with the receiver field of view. Partitioning the
//! aperture into `n×n` cells and keeping only the brightest one keeps that
//! cell's signal while cutting the noise to `P_n/n²`.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{FsoError, Result};
use crate::modem::{BerReport, Pam4Config};
use crate::numeric::{gaussian_beam_overlap, q_function};
use crate::pipeline::simulate_awgn;

/// Acceptable counted BER for the unfiltered arm of the filtering demo.
pub const DEMO_UNFILTERED_BAND: (f64, f64) = (5e-4, 5e-3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarModel {
    /// Sky spectral radiance, W·m⁻²·sr⁻¹·nm⁻¹.
    pub background_radiance: f64,
    pub optical_bandwidth_nm: f64,
    pub aperture_area_m2: f64,
    pub fov_sr: f64,
}

impl Default for SolarModel {
    /// Daylight sky near 1550 nm seen through a 1 nm filter and a 10 cm
    /// square aperture.
    fn default() -> Self {
        SolarModel {
            background_radiance: 0.06,
            optical_bandwidth_nm: 1.0,
            aperture_area_m2: 0.01,
            fov_sr: 3e-8,
        }
    }
}

/// Background power collected by the receiver: radiance × bandwidth × area × FoV.
pub fn solar_noise_power(model: &SolarModel) -> Result<f64> {
    let SolarModel {
        background_radiance,
        optical_bandwidth_nm,
        aperture_area_m2,
        fov_sr,
    } = *model;
    if !(background_radiance >= 0.0 && optical_bandwidth_nm >= 0.0 && aperture_area_m2 > 0.0 && fov_sr > 0.0) {
        return Err(FsoError::domain(
            "solar model needs radiance, bandwidth >= 0 and area, FoV > 0",
        ));
    }
    Ok(background_radiance * optical_bandwidth_nm * aperture_area_m2 * fov_sr)
}

/// Per-cell signal intensities over an `n×n` aperture, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApertureGrid {
    pub n: usize,
    pub cells: Vec<f64>,
    /// Noise power over the whole aperture.
    pub noise_power_total: f64,
}

impl ApertureGrid {
    pub fn new(n: usize, cells: Vec<f64>, noise_power_total: f64) -> Result<Self> {
        if n == 0 {
            return Err(FsoError::domain("grid order n must be >= 1"));
        }
        if cells.len() != n * n {
            return Err(FsoError::LengthMismatch {
                left: cells.len(),
                right: n * n,
            });
        }
        if cells.iter().any(|c| !(*c >= 0.0)) {
            return Err(FsoError::domain("cell powers must be >= 0"));
        }
        if !(noise_power_total > 0.0) {
            return Err(FsoError::domain("noise power must be > 0"));
        }
        Ok(ApertureGrid {
            n,
            cells,
            noise_power_total,
        })
    }

    /// Grid from a headerless CSV matrix of `n` rows by `n` columns.
    pub fn from_csv<R: Read>(input: R, noise_power_total: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut cells = Vec::new();
        let mut rows = 0;
        let mut width = None;
        for record in r.records() {
            let record = record?;
            if *width.get_or_insert(record.len()) != record.len() {
                return Err(FsoError::Format("ragged grid CSV".into()));
            }
            for field in record.iter() {
                cells.push(field.trim().parse::<f64>().map_err(|_| {
                    FsoError::Format(format!("bad cell value `{field}` on row {}", rows + 1))
                })?);
            }
            rows += 1;
        }
        if width != Some(rows) {
            return Err(FsoError::Format(format!(
                "grid CSV must be square, found {rows} rows of {} columns",
                width.unwrap_or(0)
            )));
        }
        Self::new(rows, cells, noise_power_total)
    }

    /// Grid intensities of a Gaussian spot on a square aperture of side
    /// `aperture_side_m` centred at the origin. Row 0 is the top (+y) row,
    /// column 0 the left (−x) column.
    pub fn gaussian_spot(
        n: usize,
        aperture_side_m: f64,
        center: (f64, f64),
        radius_m: f64,
        signal_power: f64,
        noise_power_total: f64,
    ) -> Result<Self> {
        if n == 0 || !(aperture_side_m > 0.0) || !(radius_m > 0.0) {
            return Err(FsoError::domain("spot grid needs n >= 1 and positive sizes"));
        }
        let step = aperture_side_m / n as f64;
        let half = aperture_side_m / 2.0;
        let cells = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let x0 = -half + j as f64 * step;
                let y1 = half - i as f64 * step;
                signal_power * gaussian_beam_overlap([x0, x0 + step, y1 - step, y1], center, radius_m)
            })
            .collect();
        Self::new(n, cells, noise_power_total)
    }

    /// Centre of cell `(row, col)`.
    pub fn cell_center(n: usize, aperture_side_m: f64, row: usize, col: usize) -> (f64, f64) {
        let step = aperture_side_m / n as f64;
        let half = aperture_side_m / 2.0;
        (-half + (col as f64 + 0.5) * step, half - (row as f64 + 0.5) * step)
    }
}

/// `(row, col)` of the brightest cell; ties go to the lowest row-major index.
pub fn select_cell(grid: &ApertureGrid) -> (usize, usize) {
    let mut best = 0;
    for (k, &c) in grid.cells.iter().enumerate() {
        if c > grid.cells[best] {
            best = k;
        }
    }
    (best / grid.n, best % grid.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteredSnr {
    pub selected: (usize, usize),
    pub snr_unfiltered: f64,
    pub snr_filtered: f64,
    /// `snr_filtered / snr_unfiltered = n²·max/Σ`.
    pub gain: f64,
    pub gain_db: f64,
}

pub fn filtered_snr(grid: &ApertureGrid) -> Result<FilteredSnr> {
    let total: f64 = grid.cells.iter().sum();
    if !(total > 0.0) {
        return Err(FsoError::domain("grid carries no signal"));
    }
    let selected = select_cell(grid);
    let best = grid.cells[selected.0 * grid.n + selected.1];
    let n2 = (grid.n * grid.n) as f64;
    let snr_unfiltered = total / grid.noise_power_total;
    let snr_filtered = best / (grid.noise_power_total / n2);
    let gain = n2 * best / total;
    Ok(FilteredSnr {
        selected,
        snr_unfiltered,
        snr_filtered,
        gain,
        gain_db: 10.0 * gain.log10(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub n: usize,
    pub aperture_side_m: f64,
    /// Spot centre; `None` centres it on cell (0, 0).
    #[serde(default)]
    pub spot_center_m: Option<(f64, f64)>,
    pub spot_radius_m: f64,
    pub signal_power: f64,
    pub solar: SolarModel,
    /// Analytic BER the unfiltered arm is calibrated to.
    pub target_unfiltered_ber: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n: 2,
            aperture_side_m: 0.1,
            spot_center_m: None,
            spot_radius_m: 0.1,
            signal_power: 1.0,
            solar: SolarModel::default(),
            target_unfiltered_ber: 1e-3,
        }
    }
}

impl FilterConfig {
    pub fn grid(&self) -> Result<ApertureGrid> {
        let center = self
            .spot_center_m
            .unwrap_or_else(|| ApertureGrid::cell_center(self.n, self.aperture_side_m, 0, 0));
        ApertureGrid::gaussian_spot(
            self.n,
            self.aperture_side_m,
            center,
            self.spot_radius_m,
            self.signal_power,
            solar_noise_power(&self.solar)?,
        )
    }
}

/// Analytic AWGN BER of a PAM-4 constellation with Gray mapping and
/// midpoint thresholds: `¼·Σ Q(Δ_i / 2σ)`.
pub fn awgn_ber(levels: &[f64; 4], noise_std: f64) -> f64 {
    if noise_std == 0.0 {
        return 0.0;
    }
    0.25 * levels
        .windows(2)
        .map(|w| q_function((w[1] - w[0]) / (2.0 * noise_std)))
        .sum::<f64>()
}

/// Noise standard deviation at which [`awgn_ber`] equals `target`, by bisection
/// to 1e-6 relative.
pub fn noise_for_ber(levels: &[f64; 4], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 0.375) {
        return Err(FsoError::Calibration(format!(
            "target BER {target} outside (0, 0.375)"
        )));
    }
    let mut lo = 0.0;
    let mut hi = levels[3] - levels[0];
    while awgn_ber(levels, hi) < target {
        hi *= 2.0;
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if awgn_ber(levels, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDemoReport {
    pub snr: FilteredSnr,
    pub noise_std_unfiltered: f64,
    pub noise_std_filtered: f64,
    pub unfiltered: BerReport,
    pub filtered: BerReport,
}

impl FilterDemoReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["arm", "noise_std", "gain_db"];
        header.extend(BerReport::CSV_HEADER);
        w.write_record(&header)?;
        for (arm, std, rep) in [
            ("unfiltered", self.noise_std_unfiltered, &self.unfiltered),
            ("filtered", self.noise_std_filtered, &self.filtered),
        ] {
            let mut row = vec![arm.to_string(), std.to_string(), self.snr.gain_db.to_string()];
            row.extend(rep.csv_row());
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Paired BER runs with and without spatial selection.
///
/// The unfiltered noise level is calibrated so the analytic BER equals
/// `target_unfiltered_ber`. Selection raises the optical SNR by the grid
/// gain; the received amplitude SNR follows it, so the filtered arm runs with
/// `σ / gain`. Both arms share the payload and noise streams.
pub fn filtering_ber_demo(
    config: &FilterConfig,
    modem: &Pam4Config,
    n_symbols: u64,
    seed: u64,
) -> Result<FilterDemoReport> {
    let snr = filtered_snr(&config.grid()?)?;
    let sigma_off = noise_for_ber(&modem.levels, config.target_unfiltered_ber)?;
    let sigma_on = sigma_off / snr.gain;
    let unfiltered = simulate_awgn(modem, n_symbols, sigma_off, seed)?;
    let (lo, hi) = DEMO_UNFILTERED_BAND;
    if !(unfiltered.ber_counted >= lo && unfiltered.ber_counted <= hi) {
        return Err(FsoError::Calibration(format!(
            "unfiltered BER {:.3e} outside [{lo:e}, {hi:e}]",
            unfiltered.ber_counted
        )));
    }
    let filtered = simulate_awgn(modem, n_symbols, sigma_on, seed)?;
    Ok(FilterDemoReport {
        snr,
        noise_std_unfiltered: sigma_off,
        noise_std_filtered: sigma_on,
        unfiltered,
        filtered,
    })
}
