//! Over-the-counter daily-limit check.

use serde::{Deserialize, Serialize};

use super::detect::Regimen;
use crate::model::{Quantity, Unit};
use crate::text::fmt_num;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ToxicityCheck {
    /// Daily amount above the limit.
    Escalate { daily: f64, limit: f64, unit: Unit },
    /// Within the limit; `complete` is false when frequency or count was missing.
    WithinLimit { daily: f64, limit: f64, unit: Unit, complete: bool },
    /// Nothing to compare: strength not given or not convertible.
    NeedsAmount { limit: f64, unit: Unit },
}

impl ToxicityCheck {
    pub fn escalates(&self) -> bool {
        matches!(self, ToxicityCheck::Escalate { .. })
    }
}

/// Daily amount is strength x (count or 1) x (frequency or 1); a missing
/// factor only makes the estimate a lower bound.
pub fn check_otc_toxicity(reported: &Regimen, limit: Quantity) -> ToxicityCheck {
    let Some(s) = &reported.strength else {
        return ToxicityCheck::NeedsAmount {
            limit: limit.value,
            unit: limit.unit,
        };
    };
    let Ok(strength) = Quantity::new(s.value, s.unit).to(limit.unit) else {
        return ToxicityCheck::NeedsAmount {
            limit: limit.value,
            unit: limit.unit,
        };
    };
    let freq = reported.effective_frequency();
    let daily = strength.value * reported.quantity.unwrap_or(1.0) * freq.unwrap_or(1.0);
    if daily > limit.value && !crate::text::approx_eq(daily, limit.value) {
        ToxicityCheck::Escalate {
            daily,
            limit: limit.value,
            unit: limit.unit,
        }
    } else {
        ToxicityCheck::WithinLimit {
            daily,
            limit: limit.value,
            unit: limit.unit,
            complete: freq.is_some(),
        }
    }
}

pub fn amount(v: f64, unit: Unit) -> String {
    format!("{} {}", fmt_num(v), unit.symbol())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medication::detect::Strength;

    fn reg(v: f64, u: Unit, q: Option<f64>, f: Option<f64>) -> Regimen {
        Regimen {
            strength: Some(Strength { value: v, unit: u }),
            quantity: q,
            frequency: f,
            extra_dose: false,
        }
    }

    #[test]
    fn limits() {
        let ibu = Quantity::new(3200.0, Unit::Mg);
        assert!(check_otc_toxicity(&reg(800.0, Unit::Mg, None, Some(6.0)), ibu).escalates());
        assert!(!check_otc_toxicity(&reg(800.0, Unit::Mg, None, Some(4.0)), ibu).escalates());
        let dox = Quantity::new(75.0, Unit::Mg);
        assert!(check_otc_toxicity(&reg(100.0, Unit::Mg, None, None), dox).escalates());
        assert!(matches!(
            check_otc_toxicity(&Regimen::default(), dox),
            ToxicityCheck::NeedsAmount { .. }
        ));
    }
}
