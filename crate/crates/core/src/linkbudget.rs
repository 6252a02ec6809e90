//! Received-power budget: atmospheric, pointing and optical losses.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::atmosphere::{LinkGeometry, LossBreakdown};
use crate::error::{FsoError, Result};

/// 10·log10(e): dB per unit of intensity exponent.
const DB_PER_NEPER: f64 = 4.342_944_819_032_518;

/// Pointing loss used when no pointing error angle is configured.
pub const FIXED_POINTING_LOSS_DB: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "db")]
pub enum OpticalLossMode {
    /// `-10·log10(η_t·η_r)`.
    Derived,
    /// A flat value in dB.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransceiverOptics {
    pub tx_efficiency: f64,
    pub rx_efficiency: f64,
    pub tx_power_dbm: f64,
    /// `None` selects the fixed 2 dB pointing allowance.
    #[serde(default)]
    pub pointing_error_rad: Option<f64>,
    pub responsivity_a_per_w: f64,
    pub noise_floor_dbm: f64,
    pub optical_loss: OpticalLossMode,
}

impl Default for TransceiverOptics {
    fn default() -> Self {
        TransceiverOptics {
            tx_efficiency: 0.8125,
            rx_efficiency: 0.8,
            tx_power_dbm: 20.0,
            pointing_error_rad: None,
            responsivity_a_per_w: 0.9,
            noise_floor_dbm: -40.0,
            optical_loss: OpticalLossMode::Derived,
        }
    }
}

impl TransceiverOptics {
    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("tx_efficiency", self.tx_efficiency), ("rx_efficiency", self.rx_efficiency)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(FsoError::domain(format!("{name} must lie in (0, 1]")));
            }
        }
        if let Some(theta) = self.pointing_error_rad {
            if !(theta >= 0.0) {
                return Err(FsoError::domain("pointing_error_rad must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub p_r_dbm: f64,
    pub l_l_db: f64,
    pub l_p_db: f64,
    pub l_o_db: f64,
    pub snr_db: f64,
}

/// Optical transceiver loss as a positive dB value.
pub fn optical_loss_db(eta_t: f64, eta_r: f64) -> Result<f64> {
    if !(eta_t > 0.0 && eta_t <= 1.0 && eta_r > 0.0 && eta_r <= 1.0) {
        return Err(FsoError::domain("optical efficiencies must lie in (0, 1]"));
    }
    Ok(-10.0 * (eta_t * eta_r).log10())
}

/// Gaussian-beam pointing loss for error angle `theta_err` and full-angle
/// divergence `divergence`: the far-field intensity `exp(-2θ²/θ_b²)` in dB,
/// with `θ_b` the 1/e² half-angle. `None` returns the fixed 2 dB allowance.
pub fn pointing_loss_db(theta_err: Option<f64>, divergence: f64) -> Result<f64> {
    if !(divergence > 0.0) {
        return Err(FsoError::domain("beam divergence must be > 0"));
    }
    match theta_err {
        None => Ok(FIXED_POINTING_LOSS_DB),
        Some(theta) if theta >= 0.0 => {
            let half = divergence / 2.0;
            Ok(DB_PER_NEPER * 2.0 * theta * theta / (half * half))
        }
        Some(_) => Err(FsoError::domain("pointing error must be >= 0")),
    }
}

pub fn received_power_dbm(
    optics: &TransceiverOptics,
    geometry: &LinkGeometry,
    losses: &LossBreakdown,
) -> Result<LinkBudget> {
    optics.validate()?;
    let l_o_db = match optics.optical_loss {
        OpticalLossMode::Derived => optical_loss_db(optics.tx_efficiency, optics.rx_efficiency)?,
        OpticalLossMode::Fixed(db) if db >= 0.0 => db,
        OpticalLossMode::Fixed(_) => return Err(FsoError::domain("fixed optical loss must be >= 0")),
    };
    let l_p_db = pointing_loss_db(optics.pointing_error_rad, geometry.beam_divergence_rad)?;
    let l_l_db = losses.l_total_db;
    let p_r_dbm = optics.tx_power_dbm - l_l_db - l_p_db - l_o_db;
    Ok(LinkBudget {
        tx_power_dbm: optics.tx_power_dbm,
        p_r_dbm,
        l_l_db,
        l_p_db,
        l_o_db,
        snr_db: p_r_dbm - optics.noise_floor_dbm,
    })
}

fn budget_rows<'a>(
    losses: &'a LossBreakdown,
    budget: &'a LinkBudget,
) -> impl Iterator<Item = (&'static str, f64, &'static str)> + 'a {
    losses
        .rows()
        .into_iter()
        .map(|(n, v)| (n, v, "dB"))
        .chain([
            ("pointing", budget.l_p_db, "dB"),
            ("optical", budget.l_o_db, "dB"),
            ("tx_power", budget.tx_power_dbm, "dBm"),
            ("received_power", budget.p_r_dbm, "dBm"),
            ("snr", budget.snr_db, "dB"),
        ])
}

/// Plain-text budget table.
pub fn write_budget_table<W: Write>(mut out: W, losses: &LossBreakdown, budget: &LinkBudget) -> std::io::Result<()> {
    writeln!(out, "{:<20} {:>12}  unit", "component", "value")?;
    for (name, value, unit) in budget_rows(losses, budget) {
        writeln!(out, "{name:<20} {value:>12.4}  {unit}")?;
    }
    writeln!(out, "{:<20} {:>12.6}", "rytov_variance", losses.rytov_variance)?;
    for w in &losses.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

/// CSV budget: one row per component.
pub fn write_budget_csv<W: Write>(out: W, losses: &LossBreakdown, budget: &LinkBudget) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "value", "unit"])?;
    for (name, value, unit) in budget_rows(losses, budget) {
        w.write_record([name, &value.to_string(), unit])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
