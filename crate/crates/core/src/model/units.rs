use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Strength units accepted in medication orders and dose limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "mg")]
    Mg,
    #[serde(rename = "mcg")]
    Mcg,
    #[serde(rename = "mEq")]
    MEq,
    #[serde(rename = "mL")]
    ML,
    #[serde(rename = "IU")]
    Iu,
}

impl Unit {
    pub const ALL: [Unit; 5] = [Unit::Mg, Unit::Mcg, Unit::MEq, Unit::ML, Unit::Iu];

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Mg => "mg",
            Unit::Mcg => "mcg",
            Unit::MEq => "mEq",
            Unit::ML => "mL",
            Unit::Iu => "IU",
        }
    }

    /// Spoken form used in task text.
    pub fn spoken(self) -> &'static str {
        match self {
            Unit::Mg => "milligrams",
            Unit::Mcg => "micrograms",
            Unit::MEq => "milliequivalents",
            Unit::ML => "milliliters",
            Unit::Iu => "units",
        }
    }

    /// Multiplier taking a value in `self` to `to`, if a conversion exists.
    ///
    /// Only mg and mcg convert into each other.
    pub fn factor_to(self, to: Unit) -> Option<f64> {
        match (self, to) {
            (a, b) if a == b => Some(1.0),
            (Unit::Mg, Unit::Mcg) => Some(1000.0),
            (Unit::Mcg, Unit::Mg) => Some(0.001),
            _ => None,
        }
    }

    pub fn convert(self, value: f64, to: Unit) -> Result<f64, ModelError> {
        self.factor_to(to)
            .map(|f| value * f)
            .ok_or(ModelError::UnitMismatch { from: self, to })
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A strength value paired with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }

    pub fn to(self, unit: Unit) -> Result<Quantity, ModelError> {
        Ok(Quantity::new(self.unit.convert(self.value, unit)?, unit))
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", crate::text::fmt_num(self.value), self.unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mg_mcg_round_trip() {
        let q = Quantity::new(0.125, Unit::Mg).to(Unit::Mcg).unwrap();
        assert!((q.value - 125.0).abs() < 1e-9);
        let back = q.to(Unit::Mg).unwrap();
        assert!((back.value - 0.125).abs() < 1e-12);
    }

    #[test]
    fn other_conversions_fail() {
        for a in Unit::ALL {
            for b in Unit::ALL {
                let defined = a == b
                    || matches!((a, b), (Unit::Mg, Unit::Mcg) | (Unit::Mcg, Unit::Mg));
                assert_eq!(a.factor_to(b).is_some(), defined, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn serde_symbols() {
        let s = serde_json::to_string(&Unit::MEq).unwrap();
        assert_eq!(s, "\"mEq\"");
        let u: Unit = serde_json::from_str("\"mcg\"").unwrap();
        assert_eq!(u, Unit::Mcg);
    }
}
