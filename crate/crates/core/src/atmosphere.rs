//! Deterministic atmospheric losses: turbulence-induced scintillation margin
//! and scattering by fog, rain and cloud.
//!
//! All losses are positive dB values. Lengths are metres internally;
//! visibility is given in km and rain rate in mm/h at the API boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::channel_trace::scintillation_index;
use crate::error::{FsoError, Result};
use crate::numeric::{adaptive_simpson, normal_quantile};

/// 10·log10(e), converts nepers of log-intensity to dB.
const DB_PER_NEPER: f64 = 4.342_944_819_032_518;

/// Relative tolerance of the slant-path Rytov integral.
pub const RYTOV_REL_TOL: f64 = 1e-6;

/// Altitude difference below which a path is treated as horizontal.
const HORIZONTAL_PATH_TOLERANCE_M: f64 = 1.0;

/// Wavelength band over which the visibility law is validated.
pub const KRUSE_VALID_BAND_M: (f64, f64) = (500e-9, 2000e-9);

pub const DEFAULT_GROUND_CN2: f64 = 1.7e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudLayer {
    pub thickness_m: f64,
    /// In-cloud visibility fed to the fog scattering law.
    pub equivalent_visibility_km: f64,
}

impl CloudLayer {
    pub fn new(thickness_m: f64) -> Self {
        CloudLayer {
            thickness_m,
            equivalent_visibility_km: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thickness_m > 0.0) || !(self.equivalent_visibility_km > 0.0) {
            return Err(FsoError::domain(
                "cloud thickness and equivalent visibility must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherScenario {
    pub visibility_km: f64,
    /// Wind speed at 0 km altitude.
    pub wind_speed_mps: f64,
    pub fog_layer_m: f64,
    pub rain_layer_km: f64,
    pub rain_rate_mm_per_h: f64,
    #[serde(default)]
    pub cloud: Option<CloudLayer>,
    /// Ground-level refractive-index structure parameter, m^-2/3.
    pub ground_cn2: f64,
}

impl WeatherScenario {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.visibility_km > 0.0, "visibility_km must be > 0"),
            (self.wind_speed_mps >= 0.0, "wind_speed_mps must be >= 0"),
            (self.fog_layer_m >= 0.0, "fog_layer_m must be >= 0"),
            (self.rain_layer_km >= 0.0, "rain_layer_km must be >= 0"),
            (self.rain_rate_mm_per_h >= 0.0, "rain_rate_mm_per_h must be >= 0"),
            (self.ground_cn2 > 0.0, "ground_cn2 must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(FsoError::domain(msg));
            }
        }
        if let Some(cloud) = &self.cloud {
            cloud.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkGeometry {
    pub distance_m: f64,
    pub tx_altitude_m: f64,
    pub rx_altitude_m: f64,
    pub wavelength_m: f64,
    pub tx_aperture_m: f64,
    pub rx_aperture_m: f64,
    /// Full-angle 1/e² beam divergence.
    pub beam_divergence_rad: f64,
    pub rx_fov_sr: f64,
}

impl LinkGeometry {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.distance_m > 0.0, "distance_m must be > 0"),
            (self.wavelength_m > 0.0, "wavelength_m must be > 0"),
            (self.tx_aperture_m > 0.0, "tx_aperture_m must be > 0"),
            (self.rx_aperture_m > 0.0, "rx_aperture_m must be > 0"),
            (self.tx_altitude_m >= 0.0, "tx_altitude_m must be >= 0"),
            (self.rx_altitude_m >= 0.0, "rx_altitude_m must be >= 0"),
            (self.beam_divergence_rad > 0.0, "beam_divergence_rad must be > 0"),
            (self.rx_fov_sr > 0.0, "rx_fov_sr must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(FsoError::domain(msg));
            }
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_m
    }

    pub fn is_horizontal(&self) -> bool {
        (self.tx_altitude_m - self.rx_altitude_m).abs() < HORIZONTAL_PATH_TOLERANCE_M
    }
}

/// Power-law rain attenuation `k · R^alpha` dB/km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RainModel {
    pub k: f64,
    pub alpha: f64,
}

impl Default for RainModel {
    fn default() -> Self {
        RainModel {
            k: 1.076,
            alpha: 0.67,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereOptions {
    /// Outage probability the scintillation fade margin is sized for.
    pub outage_probability: f64,
    pub rain: RainModel,
    /// Add beam-spreading (geometric) loss to the breakdown.
    pub include_geometric: bool,
}

impl Default for AtmosphereOptions {
    fn default() -> Self {
        AtmosphereOptions {
            outage_probability: 1e-3,
            rain: RainModel::default(),
            include_geometric: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sci_db: f64,
    pub l_fog_db: f64,
    pub l_rain_db: f64,
    pub l_cloud_db: f64,
    pub l_geometric_db: f64,
    pub l_total_db: f64,
    pub rytov_variance: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl LossBreakdown {
    /// Rows of (component name, dB) in report order.
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("scintillation", self.l_sci_db),
            ("fog", self.l_fog_db),
            ("rain", self.l_rain_db),
            ("cloud", self.l_cloud_db),
            ("geometric", self.l_geometric_db),
            ("total_atmospheric", self.l_total_db),
        ]
    }
}

/// Hufnagel-Valley refractive-index structure parameter at altitude `h` (m)
/// for ground wind speed `v` (m/s) and ground turbulence `a0` (m^-2/3).
pub fn cn2_profile(h: f64, v: f64, a0: f64) -> Result<f64> {
    if !(h >= 0.0) || !(v >= 0.0) || !(a0 > 0.0) {
        return Err(FsoError::domain(format!(
            "cn2_profile requires h >= 0, v >= 0, a0 > 0 (got h={h}, v={v}, a0={a0})"
        )));
    }
    Ok(hv_unchecked(h, v, a0))
}

fn hv_unchecked(h: f64, v: f64, a0: f64) -> f64 {
    0.00594 * (v / 27.0).powi(2) * (1e-5 * h).powi(10) * (-h / 1000.0).exp()
        + 2.7e-16 * (-h / 1500.0).exp()
        + a0 * (-h / 100.0).exp()
}

/// Plane-wave Rytov variance over the link path.
///
/// Horizontal links use the closed form `1.23 Cn² k^{7/6} ℓ^{11/6}` at the
/// mean altitude. Slant links integrate `Cn²(h(s)) s^{5/6}` along the path,
/// with `s` measured from the lower terminal; the coefficient is chosen so
/// both forms agree for constant `Cn²`.
pub fn rytov_variance(geometry: &LinkGeometry, scenario: &WeatherScenario) -> Result<f64> {
    geometry.validate()?;
    scenario.validate()?;
    let profile = |h: f64| hv_unchecked(h, scenario.wind_speed_mps, scenario.ground_cn2);
    rytov_variance_with(geometry, profile)
}

/// Rytov variance for an arbitrary nonnegative `Cn²(h)` profile.
pub fn rytov_variance_with<F>(geometry: &LinkGeometry, cn2: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let k76 = geometry.wavenumber().powf(7.0 / 6.0);
    let length = geometry.distance_m;
    if geometry.is_horizontal() {
        let h = 0.5 * (geometry.tx_altitude_m + geometry.rx_altitude_m);
        return Ok(1.23 * cn2(h) * k76 * length.powf(11.0 / 6.0));
    }
    let h_lo = geometry.tx_altitude_m.min(geometry.rx_altitude_m);
    let h_hi = geometry.tx_altitude_m.max(geometry.rx_altitude_m);
    // Substituting u = s^{11/6} removes the s^{5/6} cusp at the lower terminal.
    let u_max = length.powf(11.0 / 6.0);
    let integrand = |u: f64| {
        let s = u.powf(6.0 / 11.0);
        cn2(h_lo + (h_hi - h_lo) * s / length)
    };
    let integral = adaptive_simpson(integrand, 0.0, u_max, RYTOV_REL_TOL)?;
    Ok((1.23 * k76 * integral).max(0.0))
}

/// Log-normal fade margin: the dB depth below the mean that a unit-mean
/// log-normal intensity with the scintillation index implied by `rytov`
/// drops under with probability `outage_prob`.
pub fn scintillation_loss_db(rytov: f64, outage_prob: f64) -> Result<f64> {
    if !(rytov >= 0.0) {
        return Err(FsoError::domain("Rytov variance must be >= 0"));
    }
    if !(outage_prob > 0.0 && outage_prob <= 0.5) {
        return Err(FsoError::domain("outage probability must lie in (0, 0.5]"));
    }
    let sigma_i2 = scintillation_index(rytov)?;
    Ok(lognormal_fade_margin_db(sigma_i2, outage_prob))
}

/// `-10·log10` of the `p` quantile of a unit-mean log-normal with index `sigma_i2`.
pub fn lognormal_fade_margin_db(sigma_i2: f64, p: f64) -> f64 {
    let var = sigma_i2.ln_1p();
    let sigma = var.sqrt();
    let margin = DB_PER_NEPER * (0.5 * var - sigma * normal_quantile(p));
    margin.max(0.0)
}

/// Kruse wavelength exponent for visibility `v_km`.
pub fn kruse_exponent(v_km: f64) -> f64 {
    if v_km > 50.0 {
        1.6
    } else if v_km >= 6.0 {
        1.3
    } else {
        0.585 * v_km.cbrt()
    }
}

/// Fog/haze specific attenuation (dB/km) from visibility via the Kruse law.
pub fn fog_attenuation_db_per_km(v_km: f64, wavelength_m: f64) -> Result<f64> {
    if !(v_km > 0.0) {
        return Err(FsoError::domain("visibility must be > 0"));
    }
    if !(wavelength_m > 0.0) {
        return Err(FsoError::domain("wavelength must be > 0"));
    }
    let lambda_nm = wavelength_m * 1e9;
    let scattering_per_km = 3.91 / v_km * (lambda_nm / 550.0).powf(-kruse_exponent(v_km));
    Ok(DB_PER_NEPER * scattering_per_km)
}

pub fn wavelength_in_kruse_band(wavelength_m: f64) -> bool {
    (KRUSE_VALID_BAND_M.0..=KRUSE_VALID_BAND_M.1).contains(&wavelength_m)
}

pub fn rain_attenuation_db_per_km(rate_mm_per_h: f64, model: RainModel) -> Result<f64> {
    if !(rate_mm_per_h >= 0.0) {
        return Err(FsoError::domain("rain rate must be >= 0"));
    }
    if rate_mm_per_h == 0.0 {
        return Ok(0.0);
    }
    Ok(model.k * rate_mm_per_h.powf(model.alpha))
}

/// Cloud loss modelled as a dense-fog layer of the cloud's equivalent visibility.
pub fn cloud_attenuation_db(layer: Option<&CloudLayer>, wavelength_m: f64) -> Result<f64> {
    match layer {
        None => Ok(0.0),
        Some(layer) => {
            layer.validate()?;
            let rate = fog_attenuation_db_per_km(layer.equivalent_visibility_km, wavelength_m)?;
            Ok(rate * layer.thickness_m / 1000.0)
        }
    }
}

/// Beam-spreading loss of a diverging beam captured by the receive aperture.
pub fn geometric_loss_db(geometry: &LinkGeometry) -> f64 {
    let footprint = geometry.tx_aperture_m + geometry.distance_m * geometry.beam_divergence_rad;
    (-20.0 * (geometry.rx_aperture_m / footprint).log10()).max(0.0)
}

pub fn total_atmospheric_loss(
    scenario: &WeatherScenario,
    geometry: &LinkGeometry,
    options: &AtmosphereOptions,
) -> Result<LossBreakdown> {
    scenario.validate()?;
    geometry.validate()?;
    let lambda = geometry.wavelength_m;
    let mut warnings = Vec::new();
    if !wavelength_in_kruse_band(lambda) {
        warnings.push(format!(
            "wavelength {:.1} nm is outside the validated 500-2000 nm band of the visibility law",
            lambda * 1e9
        ));
    }

    let rytov = rytov_variance(geometry, scenario)?;
    let l_sci_db = scintillation_loss_db(rytov, options.outage_probability)?;
    let l_fog_db = if scenario.fog_layer_m > 0.0 {
        fog_attenuation_db_per_km(scenario.visibility_km, lambda)? * scenario.fog_layer_m / 1000.0
    } else {
        0.0
    };
    let l_rain_db = rain_attenuation_db_per_km(scenario.rain_rate_mm_per_h, options.rain)?
        * scenario.rain_layer_km;
    let l_cloud_db = cloud_attenuation_db(scenario.cloud.as_ref(), lambda)?;
    let l_geometric_db = if options.include_geometric {
        geometric_loss_db(geometry)
    } else {
        0.0
    };

    Ok(LossBreakdown {
        l_sci_db,
        l_fog_db,
        l_rain_db,
        l_cloud_db,
        l_geometric_db,
        l_total_db: l_sci_db + l_fog_db + l_rain_db + l_cloud_db + l_geometric_db,
        rytov_variance: rytov,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use proptest::prelude::*;

    fn horizontal(distance_m: f64) -> LinkGeometry {
        LinkGeometry {
            distance_m,
            tx_altitude_m: 0.0,
            rx_altitude_m: 0.0,
            wavelength_m: 1550e-9,
            tx_aperture_m: 0.05,
            rx_aperture_m: 0.1,
            beam_divergence_rad: 1e-4,
            rx_fov_sr: 3e-8,
        }
    }

    #[test]
    fn hv_at_ground_is_a0_plus_background() {
        let v = cn2_profile(0.0, 21.0, 1.7e-14).unwrap();
        assert!((v - 1.727e-14).abs() < 1e-27);
    }

    #[test]
    fn hv_at_10km_matches_direct_evaluation() {
        // Frozen from a 40-digit evaluation of the three terms:
        // 1.6313708094652890e-17 + 3.4361112636174825e-19 + 6.3e-58
        let expected = 1.665_731_922_101_463_8e-17;
        let v = cn2_profile(10_000.0, 21.0, 1.7e-14).unwrap();
        assert!((v - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn hv_decays_far_above_peak() {
        let mut prev = cn2_profile(20_000.0, 21.0, 1.7e-14).unwrap();
        for h in (25_000..=200_000).step_by(5_000) {
            let v = cn2_profile(h as f64, 21.0, 1.7e-14).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
        assert!(prev < 1e-30);
    }

    #[test]
    fn hv_rejects_negative_inputs() {
        assert!(cn2_profile(-1.0, 1.0, 1e-14).is_err());
        assert!(cn2_profile(1.0, -1.0, 1e-14).is_err());
        assert!(cn2_profile(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn rytov_horizontal_closed_form_and_trapezoid_agree() {
        let geom = horizontal(1000.0);
        let cn2 = 1e-14;
        let k = 2.0 * PI / 1550e-9;
        let closed = 1.23 * cn2 * k.powf(7.0 / 6.0) * 1000.0f64.powf(11.0 / 6.0);
        let value = rytov_variance_with(&geom, |_| cn2).unwrap();
        assert!((value - closed).abs() / closed < 1e-12);

        // Trapezoid oracle of 1.23·(11/6)·k^{7/6}·∫ Cn² s^{5/6} ds on a fine grid.
        let n = 200_000;
        let ds = 1000.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let s = i as f64 * ds;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * cn2 * s.powf(5.0 / 6.0);
        }
        let trap = 1.23 * 11.0 / 6.0 * k.powf(7.0 / 6.0) * acc * ds;
        assert!((trap - closed).abs() / closed < 1e-5);
    }

    #[test]
    fn rytov_slant_integral_matches_constant_profile() {
        let mut geom = horizontal(20_000.0);
        geom.rx_altitude_m = 3000.0;
        let cn2 = 2e-16;
        let value = rytov_variance_with(&geom, |_| cn2).unwrap();
        let k = geom.wavenumber();
        let closed = 1.23 * cn2 * k.powf(7.0 / 6.0) * 20_000.0f64.powf(11.0 / 6.0);
        assert!((value - closed).abs() / closed < 1e-6);
    }

    #[test]
    fn rytov_zero_turbulence_is_zero() {
        let mut geom = horizontal(5000.0);
        assert_eq!(rytov_variance_with(&geom, |_| 0.0).unwrap(), 0.0);
        geom.rx_altitude_m = 2000.0;
        assert_eq!(rytov_variance_with(&geom, |_| 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rytov_doubling_length_scales_by_two_pow_11_6() {
        let scenario = presets::clear().weather;
        for l in [500.0, 3000.0, 20_000.0] {
            let a = rytov_variance(&horizontal(l), &scenario).unwrap();
            let b = rytov_variance(&horizontal(2.0 * l), &scenario).unwrap();
            assert!(((b / a) - 2f64.powf(11.0 / 6.0)).abs() < 1e-9 * 2f64.powf(11.0 / 6.0));
        }
    }

    #[test]
    fn fade_margin_zero_without_turbulence() {
        assert_eq!(scintillation_loss_db(0.0, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn fade_margin_median_case() {
        let rytov = 0.2;
        let sigma_i2 = scintillation_index(rytov).unwrap();
        let var = (1.0 + sigma_i2).ln();
        let expected = 10.0 * std::f64::consts::E.log10() * var / 2.0;
        let got = scintillation_loss_db(rytov, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn fade_margin_matches_monte_carlo_quantile() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let rytov = 0.2;
        let p = 1e-3;
        let sigma_i2 = scintillation_index(rytov).unwrap();
        let var = (1.0 + sigma_i2).ln();
        let sigma = var.sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000_000usize;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (-0.5 * var + sigma * z).exp()
            })
            .collect();
        let k = (p * n as f64) as usize;
        let (_, q, _) = draws.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap());
        let mc_margin = -10.0 * q.log10();
        let margin = scintillation_loss_db(rytov, p).unwrap();
        assert!((margin - mc_margin).abs() < 0.1, "{margin} vs {mc_margin}");
    }

    #[test]
    fn fade_margin_domain() {
        assert!(scintillation_loss_db(-0.1, 1e-3).is_err());
        assert!(scintillation_loss_db(0.1, 0.0).is_err());
        assert!(scintillation_loss_db(0.1, 0.7).is_err());
    }

    fn kruse_oracle(v: f64, lambda_nm: f64) -> f64 {
        let q = if v > 50.0 {
            1.6
        } else if v >= 6.0 {
            1.3
        } else {
            0.585 * v.powf(1.0 / 3.0)
        };
        10.0 / std::f64::consts::LN_10 * 3.91 / v * (lambda_nm / 550.0).powf(-q)
    }

    #[test]
    fn kruse_clear_and_hazy_values() {
        let clear = fog_attenuation_db_per_km(10.0, 1550e-9).unwrap();
        assert!((clear - kruse_oracle(10.0, 1550.0)).abs() / clear < 1e-9);
        // 4.343·0.391·(1550/550)^{-1.3}
        assert!((clear - 0.441_48).abs() < 1e-4);
        let hazy = fog_attenuation_db_per_km(3.0, 1550e-9).unwrap();
        assert!((hazy - kruse_oracle(3.0, 1550.0)).abs() / hazy < 1e-9);
        assert!((kruse_exponent(3.0) - 0.585 * 3f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn kruse_at_550nm_is_independent_of_q() {
        for v in [0.5, 3.0, 6.0, 20.0, 80.0] {
            let g = fog_attenuation_db_per_km(v, 550e-9).unwrap();
            assert!((g - DB_PER_NEPER * 3.91 / v).abs() < 1e-12);
        }
    }

    #[test]
    fn kruse_monotone_within_regimes_and_bounded_jump() {
        let regimes: [(f64, f64); 2] = [(0.05, 5.999), (6.0, 50.0)];
        for (lo, hi) in regimes {
            let mut prev = f64::INFINITY;
            let n = 400;
            for i in 0..=n {
                let v = lo + (hi - lo) * i as f64 / n as f64;
                let g = fog_attenuation_db_per_km(v, 1550e-9).unwrap();
                assert!(g < prev);
                prev = g;
            }
        }
        let below = fog_attenuation_db_per_km(6.0 - 1e-9, 1550e-9).unwrap();
        let at = fog_attenuation_db_per_km(6.0, 1550e-9).unwrap();
        let jump = (below - at).abs() / below;
        // q jumps from 0.585·6^{1/3} ≈ 1.063 to 1.3; at 1550 nm this is a 21.8 % step.
        let analytic = 1.0 - (1550.0f64 / 550.0).powf(-(1.3 - 0.585 * 6f64.cbrt()));
        assert!((jump - analytic).abs() < 1e-6);
        assert!(jump < 0.25);
    }

    #[test]
    fn kruse_domain() {
        assert!(fog_attenuation_db_per_km(0.0, 1550e-9).is_err());
        assert!(fog_attenuation_db_per_km(-2.0, 1550e-9).is_err());
        assert!(!wavelength_in_kruse_band(2500e-9));
        assert!(wavelength_in_kruse_band(1550e-9));
    }

    #[test]
    fn rain_power_law() {
        let m = RainModel::default();
        assert_eq!(rain_attenuation_db_per_km(0.0, m).unwrap(), 0.0);
        let r10 = rain_attenuation_db_per_km(10.0, m).unwrap();
        assert!((r10 - 1.076 * 10f64.powf(0.67)).abs() < 1e-12);
        let ratio = rain_attenuation_db_per_km(25.0, m).unwrap()
            / rain_attenuation_db_per_km(12.5, m).unwrap();
        assert!((ratio - 2f64.powf(0.67)).abs() < 1e-12);
        assert!(rain_attenuation_db_per_km(-1.0, m).is_err());
    }

    #[test]
    fn cloud_as_dense_fog() {
        assert_eq!(cloud_attenuation_db(None, 1550e-9).unwrap(), 0.0);
        let layer = CloudLayer {
            thickness_m: 100.0,
            equivalent_visibility_km: 0.1,
        };
        let loss = cloud_attenuation_db(Some(&layer), 1550e-9).unwrap();
        let expected = 0.1 * fog_attenuation_db_per_km(0.1, 1550e-9).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        let thick = CloudLayer {
            thickness_m: 200.0,
            ..layer.clone()
        };
        let doubled = cloud_attenuation_db(Some(&thick), 1550e-9).unwrap();
        assert!((doubled - 2.0 * loss).abs() < 1e-12);
    }

    #[test]
    fn clear_preset_has_only_scintillation() {
        let cfg = presets::clear();
        let b = total_atmospheric_loss(&cfg.weather, &cfg.geometry, &cfg.atmosphere).unwrap();
        assert_eq!(b.l_fog_db, 0.0);
        assert_eq!(b.l_rain_db, 0.0);
        assert_eq!(b.l_cloud_db, 0.0);
        assert_eq!(b.l_total_db, b.l_sci_db);
        assert!(b.rytov_variance < 0.3);
    }

    #[test]
    fn hazy_preset_is_sum_of_components() {
        let cfg = presets::hazy();
        let w = &cfg.weather;
        let b = total_atmospheric_loss(w, &cfg.geometry, &cfg.atmosphere).unwrap();
        let fog = kruse_oracle(3.0, 1550.0) * 0.05;
        let rain = 1.076 * w.rain_rate_mm_per_h.powf(0.67) * 1.0;
        let rytov = rytov_variance(&cfg.geometry, w).unwrap();
        let sci = scintillation_loss_db(rytov, 1e-3).unwrap();
        assert!((b.l_fog_db - fog).abs() < 1e-9);
        assert!((b.l_rain_db - rain).abs() < 1e-9);
        assert!((b.l_total_db - (fog + rain + sci)).abs() < 1e-9);
    }

    #[test]
    fn vanishing_scenario_has_vanishing_loss() {
        let scenario = WeatherScenario {
            visibility_km: 50.0,
            wind_speed_mps: 0.0,
            fog_layer_m: 0.0,
            rain_layer_km: 0.0,
            rain_rate_mm_per_h: 0.0,
            cloud: None,
            ground_cn2: 1e-30,
        };
        // High enough that the H-V background term is negligible.
        let mut geom = horizontal(100.0);
        geom.tx_altitude_m = 60_000.0;
        geom.rx_altitude_m = 60_000.0;
        let b = total_atmospheric_loss(&scenario, &geom, &AtmosphereOptions::default()).unwrap();
        assert!(b.l_total_db < 1e-9);
    }

    #[test]
    fn geometric_loss_optional() {
        let cfg = presets::clear();
        let mut opts = cfg.atmosphere.clone();
        opts.include_geometric = true;
        let b = total_atmospheric_loss(&cfg.weather, &cfg.geometry, &opts).unwrap();
        assert!(b.l_geometric_db > 0.0);
        assert!((b.l_total_db - (b.l_sci_db + b.l_geometric_db)).abs() < 1e-9);
    }

    prop_compose! {
        fn arb_scenario()(
            v in 0.2f64..80.0,
            wind in 0.0f64..30.0,
            fog in 0.0f64..500.0,
            rain_layer in 0.0f64..5.0,
            rain in 0.0f64..50.0,
            cloud in proptest::option::of((1.0f64..1000.0, 0.02f64..1.0)),
            a0 in 1e-17f64..1e-13,
        ) -> WeatherScenario {
            WeatherScenario {
                visibility_km: v,
                wind_speed_mps: wind,
                fog_layer_m: fog,
                rain_layer_km: rain_layer,
                rain_rate_mm_per_h: rain,
                cloud: cloud.map(|(t, e)| CloudLayer { thickness_m: t, equivalent_visibility_km: e }),
                ground_cn2: a0,
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn breakdown_is_additive(
            s in arb_scenario(),
            dist in 100.0f64..30_000.0,
            h_tx in 0.0f64..5000.0,
            h_rx in 0.0f64..5000.0,
        ) {
            let mut g = horizontal(dist);
            g.tx_altitude_m = h_tx;
            g.rx_altitude_m = h_rx;
            let b = total_atmospheric_loss(&s, &g, &AtmosphereOptions::default()).unwrap();
            let sum = b.l_sci_db + b.l_fog_db + b.l_rain_db + b.l_cloud_db + b.l_geometric_db;
            prop_assert!((b.l_total_db - sum).abs() < 1e-9);
            for (_, v) in b.rows() {
                prop_assert!(v >= 0.0);
            }
        }

        #[test]
        fn fade_margin_monotone(s1 in 0.0f64..20.0, ds in 0.0f64..5.0, p in 1e-6f64..0.5, dp in 0.0f64..0.2) {
            let p2 = (p + dp).min(0.5);
            let a = lognormal_fade_margin_db(s1, p);
            let b = lognormal_fade_margin_db(s1 + ds, p);
            prop_assert!(b >= a - 1e-12);
            let c = lognormal_fade_margin_db(s1, p2);
            prop_assert!(c <= a + 1e-12);
        }

        #[test]
        fn fade_margin_grows_with_weak_turbulence(r1 in 0.0f64..1.0, dr in 0.0f64..0.5, p in 1e-6f64..0.5) {
            let a = scintillation_loss_db(r1, p).unwrap();
            let b = scintillation_loss_db(r1 + dr, p).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
