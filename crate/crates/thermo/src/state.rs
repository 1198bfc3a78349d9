use serde::{Deserialize, Serialize};
use std::fmt;

use crate::{Result, ThermoError};

/// Stable identifier of a pure component. Files may spell it as a JSON
/// string or a non-negative integer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(u64),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Text(s) => Self(s),
            Raw::Number(n) => Self(n.to_string()),
        })
    }
}

/// Components, mole fractions and temperature of a liquid mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub components: Vec<ComponentId>,
    pub x: Vec<f64>,
    pub t: f64,
}

impl MixtureState {
    pub fn new(components: Vec<ComponentId>, x: Vec<f64>, t: f64) -> Result<Self> {
        let s = Self { components, x, t };
        s.validate()?;
        Ok(s)
    }

    pub fn binary(a: ComponentId, b: ComponentId, x1: f64, t: f64) -> Result<Self> {
        Self::new(vec![a, b], vec![x1, 1.0 - x1], t)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ThermoError::InvalidState(m));
        if self.components.len() < 2 {
            return bad(format!("need at least 2 components, got {}", self.components.len()));
        }
        if self.x.len() != self.components.len() {
            return bad(format!(
                "{} mole fractions for {} components",
                self.x.len(),
                self.components.len()
            ));
        }
        if self.x.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("mole fractions must be finite and non-negative".into());
        }
        let sum: f64 = self.x.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("mole fractions sum to {sum}"));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return bad(format!("temperature {} K", self.t));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ids = vec![ComponentId::from("1"), ComponentId::from("2")];
        assert!(MixtureState::new(ids.clone(), vec![0.3, 0.7], 300.0).is_ok());
        assert!(MixtureState::new(ids.clone(), vec![0.3, 0.6], 300.0).is_err());
        assert!(MixtureState::new(ids.clone(), vec![-0.1, 1.1], 300.0).is_err());
        assert!(MixtureState::new(ids.clone(), vec![0.3, 0.7], 0.0).is_err());
        assert!(MixtureState::new(vec![ComponentId::from("1")], vec![1.0], 300.0).is_err());
    }

    #[test]
    fn ids_accept_strings_and_integers() {
        let ids: Vec<ComponentId> = serde_json::from_str(r#"["ethanol", 7]"#).unwrap();
        assert_eq!(ids, vec![ComponentId::from("ethanol"), ComponentId::from("7")]);
        assert_eq!(serde_json::to_string(&ids[1]).unwrap(), "\"7\"");
        assert!(serde_json::from_str::<ComponentId>("-1").is_err());
    }
}
