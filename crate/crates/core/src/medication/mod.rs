//! Medication agent: mention detection, regimen comparison against the
//! medication orders, contraindication advice, and OTC daily limits.

pub mod detect;
pub mod dosage;
pub mod otc;

use serde_json::json;

pub use detect::{detect_medications, parse_regimen, MedicationMention, MentionContext, Regimen, Strength};
pub use dosage::{describe_order, evaluate_dosage, frequency_phrase, DosageFlag, DosageVerdict};
pub use otc::{check_otc_toxicity, ToxicityCheck};

use crate::agent::{AgentOutput, TurnContext};
use crate::model::{AgentId, OrderStatus, ProposedTask};
use crate::state::{Finding, StateDelta, Verdict};
use crate::text::fmt_num;

fn reported_phrase(r: &Regimen) -> String {
    let mut parts = Vec::new();
    if let Some(s) = &r.strength {
        parts.push(format!("{} {}", fmt_num(s.value), s.unit.symbol()));
    }
    if let Some(q) = r.quantity {
        parts.push(format!("x{}", fmt_num(q)));
    }
    if let Some(f) = r.effective_frequency() {
        parts.push(frequency_phrase(f));
    }
    if parts.is_empty() {
        "no details".into()
    } else {
        parts.join(", ")
    }
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Medication);
    let Some(profile) = ctx.profile.as_deref() else { return out };
    let tables = ctx.tables();
    let turn = ctx.user_turn_index;
    let mentions = detect_medications(&ctx.utterance, ctx.last_agent_text(), tables);
    if mentions.is_empty() {
        return out;
    }
    let mut verdicts = Vec::new();
    let mut contra = Vec::new();
    let mut toxicity = Vec::new();
    let mut unresolved = Vec::new();
    for m in &mentions {
        let name = &m.raw_text;
        let Some(drug) = &m.drug_id else {
            unresolved.push(name.clone());
            out.task(ProposedTask::new(
                2,
                format!("The patient mentioned a medication (\"{name}\") that could not be identified. Ask them to repeat or spell its name."),
            ));
            continue;
        };
        let order = profile.medication_orders.iter().find(|o| &o.drug_id == drug);
        if m.context == MentionContext::Refill {
            out.delta(StateDelta::Record {
                finding: Finding::Refill {
                    drug: drug.clone(),
                    turn,
                },
            });
            out.delta(StateDelta::CareTeamNote {
                note: format!("their request for a {name} refill"),
            });
            continue;
        }
        match order {
            Some(o) if o.status == OrderStatus::Active => {
                if m.context == MentionContext::Question && m.regimen.is_empty() {
                    out.task(ProposedTask::new(
                        2,
                        format!("Answer using the prescription: {name} is prescribed as {}.", describe_order(o)),
                    ));
                } else {
                    let v = evaluate_dosage(&m.regimen, o);
                    let prescribed = describe_order(o);
                    let reported = reported_phrase(&m.regimen);
                    verdicts.push(json!({"drug": drug, "verdict": v.verdict, "flags": v.flags}));
                    let text = match v.verdict {
                        Verdict::Correct => (2, format!(
                            "The patient's {name} regimen ({reported}) matches the prescription. Briefly confirm they are taking it correctly."
                        )),
                        Verdict::High => {
                            let mut t = format!(
                                "The patient is taking more {name} than prescribed ({reported}). The correct dosage is {prescribed}. Explain this clearly and ask them not to take extra doses."
                            );
                            if v.flags.contains(&DosageFlag::FrequencyIncorrect) {
                                t.push_str(" The doses should be spread through the day as prescribed, not taken all at once.");
                            }
                            (1, t)
                        }
                        Verdict::Low => (2, format!(
                            "The patient reports taking less {name} than prescribed ({reported}). The correct dosage is {prescribed}. Encourage them to follow the prescription and ask them what makes it hard to follow."
                        )),
                        Verdict::Undetermined => {
                            if v.flags.contains(&DosageFlag::UnitMismatch) {
                                (2, format!(
                                    "The patient gave a {name} strength in a different unit than the prescription ({prescribed}). Ask them to read the strength from the label."
                                ))
                            } else {
                                (2, format!("Ask the patient how often they take {name} and how much each time."))
                            }
                        }
                    };
                    out.task(ProposedTask::new(text.0, text.1));
                    let detail = format!(
                        "reported {reported}; prescribed {prescribed}{}",
                        if v.flags.is_empty() {
                            String::new()
                        } else {
                            format!(
                                "; {}",
                                v.flags.iter().map(|f| serde_json::to_value(f).unwrap().as_str().unwrap_or("").to_string()).collect::<Vec<_>>().join(", ")
                            )
                        }
                    );
                    out.delta(StateDelta::Record {
                        finding: Finding::DosageVerdict {
                            drug: drug.clone(),
                            verdict: v.verdict,
                            detail,
                            turn,
                        },
                    });
                }
            }
            _ => {
                let mut advised = false;
                for c in &profile.conditions {
                    if let Some(a) = tables.contraindication(c, drug) {
                        advised = true;
                        contra.push(json!({"drug": drug, "condition": c}));
                        out.task(ProposedTask::new(1, a.advisory.clone()));
                        out.delta(StateDelta::Record {
                            finding: Finding::Contraindication {
                                drug: drug.clone(),
                                condition: c.to_string(),
                                turn,
                            },
                        });
                    }
                }
                if !advised {
                    for c in &profile.conditions {
                        if let Some(a) = tables.otc_recommendation(c, drug) {
                            advised = true;
                            out.task(ProposedTask::new(3, a.advisory.clone()));
                            break;
                        }
                    }
                }
                if matches!(order, Some(o) if o.status == OrderStatus::Discontinued) {
                    advised = true;
                    out.task(ProposedTask::new(
                        2,
                        format!("{name} was discontinued in the patient's record. Ask them to check with their doctor before taking it again."),
                    ));
                }
                if !advised && !tables.dose_limits.contains_key(drug) {
                    out.task(ProposedTask::new(
                        2,
                        format!("{name} is not on the patient's medication list and there is no guidance for it on file. Do not give dosing advice; suggest they check with their doctor or pharmacist."),
                    ));
                }
            }
        }
        if let Some(limit) = tables.dose_limits.get(drug) {
            let relevant = m.regimen.strength.is_some() || m.context != MentionContext::Question;
            let on_order = order.is_some_and(|o| o.status == OrderStatus::Active);
            if relevant {
                let check = check_otc_toxicity(&m.regimen, *limit);
                toxicity.push(json!({"drug": drug, "check": check}));
                let lim = otc::amount(limit.value, limit.unit);
                match check {
                    ToxicityCheck::Escalate { daily, unit, .. } => {
                        let total = otc::amount(daily, unit);
                        out.delta(StateDelta::Record {
                            finding: Finding::Toxicity {
                                drug: drug.clone(),
                                daily_total: total.clone(),
                                limit: lim.clone(),
                                escalated: true,
                                turn,
                            },
                        });
                        out.delta(StateDelta::EscalationRequest {
                            reason: format!("{name} {total} a day is above the {lim} daily maximum"),
                        });
                        out.task(ProposedTask::new(
                            1,
                            format!("The patient reports about {total} of {name} a day, above the {lim} daily maximum. Ask them not to take any more today."),
                        ));
                    }
                    _ if on_order => {}
                    ToxicityCheck::WithinLimit { daily, unit, complete: true, .. } => {
                        out.task(ProposedTask::new(
                            3,
                            format!(
                                "The daily maximum for {name} is {lim}; the patient's {} a day is within it. Remind them not to go over it.",
                                otc::amount(daily, unit)
                            ),
                        ));
                    }
                    _ => {
                        out.task(ProposedTask::new(
                            2,
                            format!("Ask how much {name} the patient takes each time and how many times a day. The daily maximum is {lim}."),
                        ));
                    }
                }
            }
        }
    }
    out.field("mentions", &mentions);
    out.field("verdicts", verdicts);
    out.field("contraindications", contra);
    out.field("toxicity", toxicity);
    out.field("unresolved", unresolved);
    out
}
