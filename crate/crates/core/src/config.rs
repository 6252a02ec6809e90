//! Simulation configuration, weather presets and layered overrides.
//!
//! Layering order: built-in defaults, then a named preset, then a JSON
//! config file (deep-merged), then `key=value` overrides addressed by dotted
//! path (e.g. `weather.visibility_km=5`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atmosphere::{AtmosphereOptions, LinkGeometry, WeatherScenario};
use crate::error::{FsoError, Result};
use crate::linkbudget::TransceiverOptics;
use crate::modem::{Pam4Config, Thresholds};
use crate::pat::PatConfig;
use crate::spatial_filter::FilterConfig;

/// Fewest symbols an end-to-end run may use.
pub const MIN_RUN_SYMBOLS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingSelection {
    /// Log-normal below `lognormal_max_rytov`, gamma-gamma at or above it.
    Auto,
    LogNormal,
    GammaGamma,
    /// Unit-gain channel.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum NoiseMode {
    /// Solve for the noise level whose expected BER over the realised fading
    /// trace equals the BER of a static eye with Q-factor `q`.
    QTarget { q: f64 },
    /// Noise from the link budget: `σ = 10^(−SNR_dB/10)` relative to the
    /// top received level.
    Physical,
    Fixed { std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub seed: u64,
    pub symbols: u64,
    pub fading: FadingSelection,
    pub lognormal_max_rytov: f64,
    pub noise: NoiseMode,
    pub trace_rate_hz: f64,
    pub max_trace_samples: u64,
    pub thresholds: Thresholds,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 1,
            symbols: 10_000_000,
            fading: FadingSelection::Auto,
            lognormal_max_rytov: 0.3,
            noise: NoiseMode::QTarget { q: 3.7 },
            trace_rate_hz: 1e6,
            max_trace_samples: crate::channel_trace::DEFAULT_MAX_SAMPLES,
            thresholds: Thresholds::Adaptive { block_symbols: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: String,
    pub weather: WeatherScenario,
    pub geometry: LinkGeometry,
    pub optics: TransceiverOptics,
    pub atmosphere: AtmosphereOptions,
    pub modem: Pam4Config,
    pub run: RunSettings,
    pub pat: PatConfig,
    pub filter: FilterConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.weather.validate()?;
        self.geometry.validate()?;
        self.optics.validate()?;
        self.modem.validate()?;
        if self.run.symbols < MIN_RUN_SYMBOLS {
            return Err(FsoError::InvalidValue {
                key: "run.symbols".into(),
                reason: format!("must be >= {MIN_RUN_SYMBOLS}"),
            });
        }
        if !(self.run.trace_rate_hz > 0.0) {
            return Err(FsoError::InvalidValue {
                key: "run.trace_rate_hz".into(),
                reason: "must be > 0".into(),
            });
        }
        Ok(())
    }

    /// Apply one `key=value` override. The key must already exist; the value
    /// is parsed as JSON, falling back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| FsoError::InvalidValue {
            key: assignment.into(),
            reason: "expected key=value".into(),
        })?;
        let key = key.trim();
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
        let mut tree = serde_json::to_value(&*self)?;
        *lookup_mut(&mut tree, key)? = value;
        *self = serde_json::from_value(tree).map_err(|e| FsoError::InvalidValue {
            key: key.into(),
            reason: e.to_string(),
        })?;
        Ok(())
    }

    /// Deep-merge a JSON document over this config.
    pub fn merge_json(&mut self, doc: Value) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        merge(&mut tree, doc, "")?;
        *self = serde_json::from_value(tree)?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<Value> {
        let mut tree = serde_json::to_value(self)?;
        Ok(lookup_mut(&mut tree, key)?.clone())
    }

    /// Dotted paths of every numeric leaf.
    pub fn numeric_keys(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(tree) = serde_json::to_value(self) {
            collect_numeric(&tree, String::new(), &mut out);
        }
        out
    }
}

fn lookup_mut<'a>(tree: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| FsoError::UnknownKey(key.into()))?;
    }
    Ok(node)
}

fn merge(base: &mut Value, doc: Value, path: &str) -> Result<()> {
    match (base, doc) {
        (Value::Object(b), Value::Object(d)) => {
            for (k, v) in d {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &child)?,
                    None => return Err(FsoError::UnknownKey(child)),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn collect_numeric(v: &Value, prefix: String, out: &mut Vec<String>) {
    match v {
        Value::Number(_) => out.push(prefix),
        Value::Object(map) => {
            for (k, child) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_numeric(child, p, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                collect_numeric(child, format!("{prefix}.{i}"), out);
            }
        }
        _ => {}
    }
}

/// Resolve a configuration from a preset name, an optional JSON file and a
/// list of overrides. A `scenario` field in the file selects the preset when
/// `scenario` is `None`.
pub fn resolve(scenario: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<SimConfig> {
    let doc = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| FsoError::io(path, e))?;
            Some(serde_json::from_str::<Value>(&text)?)
        }
        None => None,
    };
    let name = scenario
        .map(str::to_owned)
        .or_else(|| doc.as_ref().and_then(|d| d.get("scenario")?.as_str().map(str::to_owned)))
        .unwrap_or_else(|| "clear".into());
    let mut cfg = presets::by_name(&name)?;
    if let Some(mut doc) = doc {
        if let Some(map) = doc.as_object_mut() {
            map.remove("scenario");
        }
        cfg.merge_json(doc)?;
    }
    for o in overrides {
        cfg.set(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub mod presets {
    use super::*;

    pub const NAMES: [&str; 2] = ["clear", "hazy"];

    fn geometry(altitude_m: f64) -> LinkGeometry {
        LinkGeometry {
            distance_m: 20_000.0,
            tx_altitude_m: altitude_m,
            rx_altitude_m: altitude_m,
            wavelength_m: 1550e-9,
            tx_aperture_m: 0.05,
            rx_aperture_m: 0.1,
            beam_divergence_rad: 1e-4,
            rx_fov_sr: 3e-8,
        }
    }

    fn base(name: &str, weather: WeatherScenario, altitude_m: f64) -> SimConfig {
        SimConfig {
            scenario: name.into(),
            weather,
            geometry: geometry(altitude_m),
            optics: TransceiverOptics::default(),
            atmosphere: AtmosphereOptions::default(),
            modem: Pam4Config::default(),
            run: RunSettings::default(),
            pat: PatConfig::default(),
            filter: FilterConfig::default(),
        }
    }

    /// Clear weather: 10 km visibility, 1 m/s wind, no fog or rain; 20 km
    /// horizontal link at 2500 m (weak turbulence).
    pub fn clear() -> SimConfig {
        base(
            "clear",
            WeatherScenario {
                visibility_km: 10.0,
                wind_speed_mps: 1.0,
                fog_layer_m: 0.0,
                rain_layer_km: 0.0,
                rain_rate_mm_per_h: 0.0,
                cloud: None,
                ground_cn2: crate::atmosphere::DEFAULT_GROUND_CN2,
            },
            2500.0,
        )
    }

    /// Hazy weather: 3 km visibility, 6 m/s wind, 50 m fog layer, 1 km of
    /// 2.5 mm/h rain; 20 km horizontal link at 1000 m (moderate turbulence).
    pub fn hazy() -> SimConfig {
        base(
            "hazy",
            WeatherScenario {
                visibility_km: 3.0,
                wind_speed_mps: 6.0,
                fog_layer_m: 50.0,
                rain_layer_km: 1.0,
                rain_rate_mm_per_h: 2.5,
                cloud: None,
                ground_cn2: crate::atmosphere::DEFAULT_GROUND_CN2,
            },
            1000.0,
        )
    }

    pub fn by_name(name: &str) -> Result<SimConfig> {
        match name {
            "clear" => Ok(clear()),
            "hazy" => Ok(hazy()),
            other => Err(FsoError::UnknownPreset(other.into())),
        }
    }

    /// One-line description per preset.
    pub fn describe() -> Vec<(&'static str, String)> {
        NAMES
            .iter()
            .map(|&n| {
                let c = by_name(n).expect("listed preset");
                let w = &c.weather;
                (
                    n,
                    format!(
                        "V={} km, wind={} m/s, fog layer={} m, rain layer={} km at {} mm/h, \
                         λ={} nm, ℓ={} km, terminals at {} m",
                        w.visibility_km,
                        w.wind_speed_mps,
                        w.fog_layer_m,
                        w.rain_layer_km,
                        w.rain_rate_mm_per_h,
                        c.geometry.wavelength_m * 1e9,
                        c.geometry.distance_m / 1e3,
                        c.geometry.tx_altitude_m
                    ),
                )
            })
            .collect()
    }
}
