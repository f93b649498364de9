//! Reported-versus-prescribed regimen comparison.

use serde::{Deserialize, Serialize};

use super::detect::Regimen;
use crate::model::{MedicationOrder, Quantity};
use crate::state::Verdict;
use crate::text::{approx_eq, fmt_num};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DosageFlag {
    StrengthDiffers,
    QuantityDiffers,
    FrequencyIncorrect,
    MissingFrequency,
    UnitMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosageVerdict {
    pub verdict: Verdict,
    pub flags: Vec<DosageFlag>,
    /// Reported daily total in the order's unit, when computable.
    pub reported_daily: Option<f64>,
    pub prescribed_daily: f64,
}

/// "once a day", "twice a day", "3 times a day".
pub fn frequency_phrase(f: f64) -> String {
    if approx_eq(f, 1.0) {
        "once a day".into()
    } else if approx_eq(f, 2.0) {
        "twice a day".into()
    } else {
        format!("{} times a day", fmt_num(f))
    }
}

/// Human phrasing of a prescribed regimen.
pub fn describe_order(o: &MedicationOrder) -> String {
    let qty = if approx_eq(o.quantity_per_dose, 1.0) {
        String::new()
    } else {
        format!(" x{}", fmt_num(o.quantity_per_dose))
    };
    format!("{}{qty}, {}", o.strength(), frequency_phrase(o.frequency_per_day))
}

/// Compares a reported regimen with an order.
///
/// Missing frequency is undetermined; missing strength falls back to the
/// prescribed one; a stated strength without a count is one unit per dose.
pub fn evaluate_dosage(reported: &Regimen, order: &MedicationOrder) -> DosageVerdict {
    let prescribed_daily = order.daily_total();
    let undetermined = |flag| DosageVerdict {
        verdict: Verdict::Undetermined,
        flags: vec![flag],
        reported_daily: None,
        prescribed_daily,
    };
    let Some(freq) = reported.effective_frequency() else {
        return undetermined(DosageFlag::MissingFrequency);
    };
    let (strength, qty) = match &reported.strength {
        None => (order.strength_value, reported.quantity.unwrap_or(order.quantity_per_dose)),
        Some(s) => match (Quantity::new(s.value, s.unit)).to(order.strength_unit) {
            Ok(q) => (q.value, reported.quantity.unwrap_or(1.0)),
            Err(_) => return undetermined(DosageFlag::UnitMismatch),
        },
    };
    let per_dose = strength * qty;
    let prescribed_per_dose = order.strength_value * order.quantity_per_dose;
    let daily = per_dose * freq;
    let mut flags = Vec::new();
    if !approx_eq(strength, order.strength_value) {
        flags.push(DosageFlag::StrengthDiffers);
    }
    if !approx_eq(qty, order.quantity_per_dose) {
        flags.push(DosageFlag::QuantityDiffers);
    }
    let verdict = if approx_eq(daily, prescribed_daily) {
        if approx_eq(freq, order.frequency_per_day) {
            Verdict::Correct
        } else {
            flags.push(DosageFlag::FrequencyIncorrect);
            if per_dose > prescribed_per_dose {
                Verdict::High
            } else {
                Verdict::Low
            }
        }
    } else {
        if !approx_eq(freq, order.frequency_per_day) {
            flags.push(DosageFlag::FrequencyIncorrect);
        }
        if daily > prescribed_daily {
            Verdict::High
        } else {
            Verdict::Low
        }
    };
    DosageVerdict {
        verdict,
        flags,
        reported_daily: Some(daily),
        prescribed_daily,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medication::detect::Strength;
    use crate::model::{DrugId, OrderStatus, Unit};

    fn order(v: f64, u: Unit, q: f64, f: f64) -> MedicationOrder {
        MedicationOrder {
            drug_id: DrugId::new("x"),
            strength_value: v,
            strength_unit: u,
            quantity_per_dose: q,
            frequency_per_day: f,
            route: "oral".into(),
            status: OrderStatus::Active,
        }
    }

    fn reg(s: Option<(f64, Unit)>, q: Option<f64>, f: Option<f64>, extra: bool) -> Regimen {
        Regimen {
            strength: s.map(|(value, unit)| Strength { value, unit }),
            quantity: q,
            frequency: f,
            extra_dose: extra,
        }
    }

    #[test]
    fn anderson_cases() {
        let dig = order(125.0, Unit::Mcg, 1.0, 1.0);
        let v = evaluate_dosage(&reg(Some((125.0, Unit::Mcg)), None, Some(1.0), true), &dig);
        assert_eq!(v.verdict, Verdict::High);
        let lasix = order(40.0, Unit::Mg, 1.0, 2.0);
        let v = evaluate_dosage(&reg(Some((80.0, Unit::Mg)), None, Some(1.0), false), &lasix);
        assert_eq!(v.verdict, Verdict::High);
        assert!(v.flags.contains(&DosageFlag::FrequencyIncorrect));
    }

    #[test]
    fn fallbacks_and_mismatch() {
        let o = order(20.0, Unit::Mg, 1.0, 1.0);
        assert_eq!(evaluate_dosage(&reg(None, None, None, false), &o).verdict, Verdict::Undetermined);
        assert_eq!(evaluate_dosage(&reg(None, None, Some(1.0), false), &o).verdict, Verdict::Correct);
        assert_eq!(evaluate_dosage(&reg(None, Some(2.0), Some(1.0), false), &o).verdict, Verdict::High);
        assert_eq!(evaluate_dosage(&reg(Some((0.02, Unit::Mg)), None, Some(1.0), false), &o).verdict, Verdict::Low);
        let v = evaluate_dosage(&reg(Some((20.0, Unit::MEq)), None, Some(1.0), false), &o);
        assert_eq!((v.verdict, v.flags.clone()), (Verdict::Undetermined, vec![DosageFlag::UnitMismatch]));
        assert_eq!(
            evaluate_dosage(&reg(Some((20000.0, Unit::Mcg)), None, Some(1.0), false), &o).verdict,
            Verdict::Correct
        );
    }
}
