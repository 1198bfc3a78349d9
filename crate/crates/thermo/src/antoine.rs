//! Antoine vapor pressures, `log10(p / kPa) = A - B / (C + T / K)`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{ComponentId, Result, ThermoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntoineCoefficients {
    pub component_id: ComponentId,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "T_min")]
    pub t_min: f64,
    #[serde(rename = "T_max")]
    pub t_max: f64,
}

/// A vapor pressure in kPa plus a flag for extrapolation outside the
/// coefficients' validity range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaporPressure {
    pub kpa: f64,
    pub out_of_range: bool,
}

impl AntoineCoefficients {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.c, self.t_min, self.t_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ThermoError::InvalidAntoine(format!(
                "non-finite coefficient for component {}",
                self.component_id
            )));
        }
        if self.t_min >= self.t_max {
            return Err(ThermoError::InvalidAntoine(format!(
                "T_min {} >= T_max {} for component {}",
                self.t_min, self.t_max, self.component_id
            )));
        }
        Ok(())
    }

    pub fn in_range(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

pub fn antoine_vapor_pressure(coeffs: &AntoineCoefficients, t: f64) -> Result<VaporPressure> {
    let denom = coeffs.c + t;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(ThermoError::AntoineSingularity(denom));
    }
    Ok(VaporPressure {
        kpa: 10f64.powf(coeffs.a - coeffs.b / denom),
        out_of_range: !coeffs.in_range(t),
    })
}

pub fn parse_antoine(text: &str) -> Result<Vec<AntoineCoefficients>> {
    let list: Vec<AntoineCoefficients> = serde_json::from_str(text)?;
    for c in &list {
        c.validate()?;
    }
    Ok(list)
}

pub fn read_antoine_file(path: impl AsRef<Path>) -> Result<Vec<AntoineCoefficients>> {
    parse_antoine(&std::fs::read_to_string(path)?)
}

pub fn write_antoine_file(path: impl AsRef<Path>, coeffs: &[AntoineCoefficients]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(coeffs)?)?;
    Ok(())
}
