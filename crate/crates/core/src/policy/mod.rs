//! Policy agent: detects facility-policy questions, rewrites them into a
//! standalone query, and retrieves matching policy chunks for the tenant.

pub mod embed;
pub mod index;

pub use embed::{cosine, embed, terms, DIM};
pub use index::{corpus_fingerprint, Hit, PolicyIndex, TenantIndex, DEFAULT_FLOOR};

use crate::agent::{AgentOutput, TurnContext};
use crate::model::{AgentId, PolicyCategory, ProposedTask};
use crate::text::{contains_phrase, normalize};

/// Chunks returned per query.
pub const TOP_K: usize = 3;

/// Trigger phrases per category, each with the topic vocabulary the
/// rewrite adds so short questions reach the wording policies use.
fn keywords(c: PolicyCategory) -> &'static [(&'static str, &'static str)] {
    use PolicyCategory::*;
    match c {
        AdmissionRegistration => &[
            ("register", "registration admission photo id"),
            ("registration", "admission photo id"),
            ("admission", "registration"),
            ("admitted", "admission"),
            ("check in", "registration"),
            ("pharmacy", "prescriptions filled"),
            ("months of medication", "prescriptions pharmacy supply"),
            ("month supply", "prescriptions pharmacy medication"),
            ("months supply", "prescriptions pharmacy medication"),
            ("90 day supply", "prescriptions pharmacy medication"),
            ("fill my prescription", "pharmacy filled medication"),
            ("prescriptions filled", "pharmacy medication"),
        ],
        VisitorPolicy => &[
            ("visit", "visiting hours visitors"),
            ("visitor", "visiting hours"),
            ("visitors", "visiting hours"),
            ("visiting hours", "visitors"),
            ("visiting", "hours visitors"),
        ],
        PaymentsFinancialAid => &[
            ("bill", "billing office payment"),
            ("billing", "bill office payment"),
            ("pay", "payment billing bill"),
            ("payment", "billing bill"),
            ("financial aid", "financial assistance discounts"),
            ("financial assistance", "discounts billing"),
            ("cost", "billing payment"),
            ("insurance", "billing"),
        ],
        ServicesAmenities => &[
            ("parking", "garage lot free"),
            ("park", "parking garage lot"),
            ("valet", "parking entrance"),
            ("cafeteria", "meal food open"),
            ("food court", "cafeteria meal"),
            ("wifi", "internet"),
            ("interpreter", "languages services"),
            ("gift shop", "shop open"),
        ],
        PatientRightsPrivacy => &[
            ("medical records", "copy request office"),
            ("my records", "medical copy request"),
            ("copy of my", "medical records request"),
            ("privacy", "records released"),
            ("my rights", "patient rights"),
        ],
        ComplianceRegulations => &[
            ("smoking", "smoke free campus vaping"),
            ("smoke", "smoking free campus"),
            ("vape", "vaping smoking"),
            ("regulations", "allowed"),
        ],
        Accommodation => &[
            ("lodging", "hotel rooms families guest"),
            ("stay overnight", "hotel rooms families"),
            ("hotel", "rooms families guest"),
            ("guest room", "hotel families"),
            ("place to stay", "hotel rooms families"),
        ],
        SafetySecurity => &[
            ("security", "officers escort"),
            ("lost and found", "security office"),
            ("safe to", "security officers"),
        ],
        HospitalCare => &[("discharge", "nurse reviews follow up"), ("discharged", "discharge nurse")],
        ContactInformation => &[
            ("phone number", "contact office"),
            ("contact", "phone office"),
            ("email", "contact office"),
            ("who do i call", "phone contact office"),
        ],
        AddressLocation => &[
            ("address", "located road street"),
            ("located", "address"),
            ("directions", "address located"),
            ("how do i get to", "address located"),
            ("where is the hospital", "address located"),
        ],
    }
}

/// Category with the most keyword hits; ties go to declaration order.
pub fn categorize(utterance: &str) -> Option<PolicyCategory> {
    let mut best: Option<(usize, PolicyCategory)> = None;
    for c in PolicyCategory::ALL {
        let n = keywords(c).iter().filter(|(k, _)| contains_phrase(utterance, k)).count();
        if n > 0 && best.is_none_or(|(b, _)| n > b) {
            best = Some((n, c));
        }
    }
    best.map(|(_, c)| c)
}

fn is_question(utterance: &str) -> bool {
    const LEADS: &[&str] = &[
        "what", "where", "when", "how", "who", "which", "can", "could", "is", "are", "do", "does", "will",
        "may", "would", "should",
    ];
    if utterance.contains('?') {
        return true;
    }
    let n = normalize(utterance);
    let first = n.split(' ').next().unwrap_or("");
    LEADS.contains(&first) || contains_phrase(utterance, "i was wondering") || contains_phrase(utterance, "tell me")
}

/// Category when the utterance is a question about facility policy.
pub fn detect_policy_question(utterance: &str) -> Option<PolicyCategory> {
    if is_question(utterance) {
        categorize(utterance)
    } else {
        None
    }
}

fn has_dangling_reference(utterance: &str) -> bool {
    let n = format!(" {} ", normalize(utterance))
        .replace(" is there ", " ")
        .replace(" are there ", " ")
        .replace(" is it ", " ");
    ["there", "it", "that place"].iter().any(|p| contains_phrase(&n, p))
}

fn template(c: PolicyCategory, facility: &str) -> String {
    use PolicyCategory::*;
    match c {
        AdmissionRegistration => format!("What is the registration and prescription policy at {facility}?"),
        VisitorPolicy => format!("What is the visitor policy at {facility}?"),
        PaymentsFinancialAid => format!("What billing and financial aid options are there at {facility}?"),
        ServicesAmenities => format!("What are the parking and amenity options at {facility}?"),
        PatientRightsPrivacy => format!("How can a patient access their medical records at {facility}?"),
        ComplianceRegulations => format!("What is the smoking policy at {facility}?"),
        Accommodation => format!("What lodging is available for families at {facility}?"),
        SafetySecurity => format!("What security services are available at {facility}?"),
        HospitalCare => format!("What is the discharge process at {facility}?"),
        ContactInformation => format!("What is the contact information for {facility}?"),
        AddressLocation => format!("What is the address of {facility}?"),
    }
}

/// Replaces generic references to the facility with its name.
fn name_facility(utterance: &str, facility: &str) -> String {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| {
        regex::Regex::new(r"(?i)\b(?:the|your|this) (?:hospital|clinic|medical center|facility)\b").unwrap()
    });
    re.replace_all(utterance, facility).into_owned()
}

/// Standalone query: the utterance itself, or a category template naming
/// the facility when the utterance leans on an earlier turn, followed by
/// the topic vocabulary of the matched keywords.
pub fn rewrite_question(utterance: &str, category: PolicyCategory, facility: &str) -> String {
    let base = if has_dangling_reference(utterance) {
        let t = template(category, facility);
        let topic: Vec<String> = terms(utterance)
            .into_iter()
            .filter(|w| !matches!(w.as_str(), "place" | "hospital"))
            .collect();
        if topic.is_empty() {
            t
        } else {
            format!("{t} ({})", topic.join(" "))
        }
    } else {
        name_facility(utterance.trim(), facility)
    };
    let mut seen = terms(&base);
    let mut extra: Vec<&str> = Vec::new();
    let matched = PolicyCategory::ALL
        .into_iter()
        .flat_map(|c| keywords(c).iter())
        .filter(|(k, _)| contains_phrase(utterance, k));
    for (_, exp) in matched {
        for w in exp.split(' ') {
            let t = terms(w);
            if t.first().is_some_and(|t| !seen.contains(t)) {
                seen.extend(t);
                extra.push(w);
            }
        }
    }
    if extra.is_empty() {
        base
    } else {
        format!("{base} [topics: {}]", extra.join(" "))
    }
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Policy);
    let Some(category) = detect_policy_question(&ctx.utterance) else {
        return out;
    };
    out.field("is_policy", true);
    out.field("category", category.as_str());
    let Some(idx) = ctx.resources.policy.tenant(&ctx.resources.tenant()) else {
        out.task(ProposedTask::new(
            2,
            "There is no policy information on file for this facility. Tell the patient a staff member will follow up with the answer.",
        ));
        return out;
    };
    let query = rewrite_question(&ctx.utterance, category, &idx.facility);
    out.field("rewritten_question", &query);
    let hits = idx.search(&query, TOP_K);
    out.field("chunk_ids", hits.iter().map(|h| h.chunk_id.clone()).collect::<Vec<_>>());
    out.field("similarities", hits.iter().map(|h| h.similarity).collect::<Vec<_>>());
    if hits.is_empty() {
        out.task(ProposedTask::new(
            2,
            format!(
                "No {} policy matches the patient's question. Tell the patient you do not have that information and a staff member will follow up.",
                idx.facility
            ),
        ));
        return out;
    }
    let texts: Vec<&str> = hits
        .iter()
        .filter_map(|h| idx.chunk(&h.chunk_id).map(|c| c.text.as_str()))
        .collect();
    out.task(ProposedTask::new(
        2,
        format!(
            "Answer the patient's question \"{query}\" using only this {} policy: {}",
            idx.facility,
            texts.join(" ")
        ),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_and_rewrite() {
        assert_eq!(
            detect_policy_question("Can I get multiple months of medication at once?"),
            Some(PolicyCategory::AdmissionRegistration)
        );
        assert_eq!(detect_policy_question("I take my pills every day."), None);
        let q = rewrite_question("Is there parking there?", PolicyCategory::ServicesAmenities, "Lakeside");
        assert!(q.contains("Lakeside"));
        assert_eq!(
            rewrite_question("What are the visiting hours?", PolicyCategory::VisitorPolicy, "X"),
            "What are the visiting hours? [topics: visitors]"
        );
        assert_eq!(
            rewrite_question("Where is the hospital?", PolicyCategory::AddressLocation, "Lakeside Community Hospital"),
            "Where is Lakeside Community Hospital? [topics: address located]"
        );
    }
}
