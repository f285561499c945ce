//! Detection-error model for satellite forest-loss products.
//!
//! A sensor flags a fraction `r_d` of truly deforested area and a fraction
//! `r_f` of stable forest. For a site of area `A` with true loss `D` the
//! observed loss is `r_f (A - D) + r_d D`. Two sites of equal area therefore
//! differ, as observed, by `(D1 - D2)(r_d - r_f)`: every observed difference
//! is shrunk by the factor `r_d - r_f`, and dividing by it undoes the shrinkage.
//!
//! The rates are scalars for a whole run. Regional heterogeneity is handled
//! by running with another model. Step changes in sensor sensitivity over
//! time (e.g. a jump in detections after a change of satellite) cannot be
//! expressed by this model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BiasError {
    #[error("rates must satisfy 0 <= r_f < r_d <= 1 (got r_d = {r_d}, r_f = {r_f})")]
    InvalidRates { r_d: f64, r_f: f64 },
    #[error("true deforestation {defor} ha exceeds site area {area} ha")]
    DeforestationExceedsArea { defor: f64, area: f64 },
    #[error("baseline must be positive")]
    ZeroBaseline,
    #[error("unknown bias preset '{0}' (expected mcnicol2018 or hansen-wet-tropics)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRates", into = "RawRates")]
pub struct BiasModel {
    r_d: f64,
    r_f: f64,
}

#[derive(Serialize, Deserialize)]
struct RawRates {
    r_d: f64,
    r_f: f64,
}

impl TryFrom<RawRates> for BiasModel {
    type Error = BiasError;
    fn try_from(r: RawRates) -> Result<Self, BiasError> {
        BiasModel::new(r.r_d, r.r_f)
    }
}

impl From<BiasModel> for RawRates {
    fn from(m: BiasModel) -> Self {
        RawRates { r_d: m.r_d, r_f: m.r_f }
    }
}

/// Named rate pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasPreset {
    /// Dry African woodlands: r_d = 0.19, r_f = 0.08.
    McNicol2018,
    /// Product providers' wet-tropics accuracy: r_d = 0.83, r_f = 0.002.
    HansenWetTropics,
}

impl BiasPreset {
    pub fn model(self) -> BiasModel {
        match self {
            BiasPreset::McNicol2018 => BiasModel { r_d: 0.19, r_f: 0.08 },
            BiasPreset::HansenWetTropics => BiasModel { r_d: 0.83, r_f: 0.002 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BiasPreset::McNicol2018 => "mcnicol2018",
            BiasPreset::HansenWetTropics => "hansen-wet-tropics",
        }
    }
}

impl fmt::Display for BiasPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasPreset {
    type Err = BiasError;
    fn from_str(s: &str) -> Result<Self, BiasError> {
        match s {
            "mcnicol2018" => Ok(BiasPreset::McNicol2018),
            "hansen-wet-tropics" => Ok(BiasPreset::HansenWetTropics),
            other => Err(BiasError::UnknownPreset(other.to_string())),
        }
    }
}

impl BiasModel {
    pub fn new(r_d: f64, r_f: f64) -> Result<Self, BiasError> {
        if (0.0..=1.0).contains(&r_d) && (0.0..=1.0).contains(&r_f) && r_f < r_d {
            Ok(Self { r_d, r_f })
        } else {
            Err(BiasError::InvalidRates { r_d, r_f })
        }
    }

    /// A sensor without omission or commission error.
    pub fn perfect() -> Self {
        Self { r_d: 1.0, r_f: 0.0 }
    }

    pub fn detection_rate(&self) -> f64 {
        self.r_d
    }

    pub fn false_alarm_rate(&self) -> f64 {
        self.r_f
    }

    /// Observed loss on a site of `area_ha` with `true_defor_ha` of true loss.
    pub fn predicted_deforestation(&self, area_ha: f64, true_defor_ha: f64) -> Result<f64, BiasError> {
        if true_defor_ha > area_ha || true_defor_ha < 0.0 {
            return Err(BiasError::DeforestationExceedsArea {
                defor: true_defor_ha,
                area: area_ha,
            });
        }
        Ok(self.r_f * (area_ha - true_defor_ha) + self.r_d * true_defor_ha)
    }

    /// `r_d - r_f`: the factor by which observed differences understate true ones.
    pub fn correction_factor(&self) -> f64 {
        self.r_d - self.r_f
    }

    /// Fraction of a true difference that disappears from the observed one.
    pub fn understatement(&self) -> f64 {
        1.0 - self.correction_factor()
    }

    /// True difference implied by an observed one.
    pub fn correct_difference(&self, observed_diff_ha: f64) -> f64 {
        observed_diff_ha / self.correction_factor()
    }

    /// Corrected effectiveness `(observed / baseline) / (r_d - r_f)`.
    pub fn corrected_effectiveness(
        &self,
        observed_effect_ha_per_yr: f64,
        baseline_ha_per_yr: f64,
    ) -> Result<Effectiveness, BiasError> {
        if !(baseline_ha_per_yr > 0.0) {
            return Err(BiasError::ZeroBaseline);
        }
        let fraction = observed_effect_ha_per_yr / baseline_ha_per_yr / self.correction_factor();
        Ok(Effectiveness {
            fraction,
            exceeds_one: fraction > 1.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effectiveness {
    pub fraction: f64,
    /// Above 100 %: the correction over-shoots or the model is misspecified.
    pub exceeds_one: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_sensor_reports_truth() {
        let m = BiasModel::perfect();
        assert_eq!(m.predicted_deforestation(100.0, 10.0).unwrap(), 10.0);
        assert_eq!(m.correction_factor(), 1.0);
    }

    #[test]
    fn dry_woodland_observation() {
        let m = BiasModel::new(0.19, 0.08).unwrap();
        // 0.08 * 90 + 0.19 * 10
        let v = m.predicted_deforestation(100.0, 10.0).unwrap();
        assert!((v - 9.1).abs() < 1e-12);
        assert!((m.predicted_deforestation(100.0, 0.0).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn correction_inverts_shrinkage() {
        let m = BiasModel::new(0.19, 0.08).unwrap();
        assert!((m.correct_difference(11.0) - 100.0).abs() < 1e-9);
        assert_eq!(m.correct_difference(0.0), 0.0);
    }

    #[test]
    fn regional_effectiveness() {
        let perfect = BiasModel::perfect();
        let e = perfect.corrected_effectiveness(414.0, 2700.0).unwrap();
        assert!((e.fraction - 0.1533).abs() < 1e-3);
        let m = BiasModel::new(0.19, 0.08).unwrap();
        let e = m.corrected_effectiveness(423.0, 2700.0).unwrap();
        assert!((e.fraction - 1.4242).abs() < 1e-3);
        assert!(e.exceeds_one);
        assert_eq!(m.corrected_effectiveness(0.0, 2700.0).unwrap().fraction, 0.0);
        assert_eq!(
            m.corrected_effectiveness(1.0, 0.0),
            Err(BiasError::ZeroBaseline)
        );
    }

    #[test]
    fn rejects_uninformative_sensor() {
        assert!(BiasModel::new(0.3, 0.3).is_err());
        assert!(BiasModel::new(1.1, 0.0).is_err());
        assert!(BiasModel::new(0.5, -0.1).is_err());
    }

    #[test]
    fn loss_beyond_area_is_rejected() {
        let m = BiasModel::perfect();
        assert!(matches!(
            m.predicted_deforestation(10.0, 11.0),
            Err(BiasError::DeforestationExceedsArea { .. })
        ));
    }

    #[test]
    fn presets_parse() {
        assert_eq!(
            "mcnicol2018".parse::<BiasPreset>().unwrap().model(),
            BiasModel::new(0.19, 0.08).unwrap()
        );
        assert!("other".parse::<BiasPreset>().is_err());
    }
}
