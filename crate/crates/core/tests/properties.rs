//! Randomized invariants over the pure building blocks.

use proptest::prelude::*;

use careline_core::labs::{classify, Classification};
use careline_core::medication::detect::{parse_regimen, Regimen, Strength};
use careline_core::medication::dosage::evaluate_dosage;
use careline_core::model::{AgentId, DrugId, MedicationOrder, OrderStatus, ProposedTask, Range, Speaker, TaskId, Unit};
use careline_core::policy::{cosine, embed};
use careline_core::prompt::{ObjectiveBlock, PromptDoc, PromptTask};
use careline_core::state::Phase;
use careline_core::tasks::TaskQueue;

fn rank(c: Classification) -> u8 {
    match c {
        Classification::ImplausibleLow => 0,
        Classification::Below => 1,
        Classification::Within => 2,
        Classification::Above => 3,
        Classification::ImplausibleHigh => 4,
    }
}

fn order(strength: f64, unit: Unit, qty: f64, freq: f64) -> MedicationOrder {
    MedicationOrder {
        drug_id: DrugId::new("prop"),
        strength_value: strength,
        strength_unit: unit,
        quantity_per_dose: qty,
        frequency_per_day: freq,
        route: "oral".into(),
        status: OrderStatus::Active,
    }
}

#[derive(Debug, Clone)]
enum Op {
    Add { agent: u8, priority: u8, ttl: Option<u32>, key: Option<u8> },
    Consume(Vec<u8>),
    Collect,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..8, 0u8..3, proptest::option::of(1u32..4), proptest::option::of(0u8..3))
            .prop_map(|(agent, priority, ttl, key)| Op::Add { agent, priority, ttl, key }),
        proptest::collection::vec(0u8..20, 0..4).prop_map(Op::Consume),
        Just(Op::Collect),
    ]
}

const AGENTS: [AgentId; 8] = [
    AgentId::Privacy,
    AgentId::Intervention,
    AgentId::Checklist,
    AgentId::Medication,
    AgentId::Labs,
    AgentId::Policy,
    AgentId::Nutrition,
    AgentId::Summary,
];

fn safe_text() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 ,.?']{0,40}[A-Za-z.?]".prop_map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
}

proptest! {
    #[test]
    fn classification_is_monotone_in_value(
        pl in -50.0f64..50.0, pw in 1.0f64..100.0,
        a in 0.0f64..1.0, b in 0.0f64..1.0,
        v1 in -100.0f64..200.0, v2 in -100.0f64..200.0,
    ) {
        let plausible = Range { low: pl, high: pl + pw };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let normal = Range { low: pl + lo * pw, high: pl + hi * pw };
        let (x, y) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let (cx, cy) = (classify(x, plausible, normal), classify(y, plausible, normal));
        prop_assert!(rank(cx) <= rank(cy));
        prop_assert_eq!(cx.is_implausible(), x < plausible.low || x > plausible.high);
    }

    #[test]
    fn dosage_verdict_survives_mg_to_mcg_restatement(
        strength in 1u32..2000, qty in 1u32..4, freq in 1u32..5,
        rs in proptest::option::of(1u32..4000), rq in proptest::option::of(1u32..5),
        rf in proptest::option::of(1u32..7), extra in any::<bool>(),
    ) {
        let o = order(f64::from(strength), Unit::Mg, f64::from(qty), f64::from(freq));
        let mg = Regimen {
            strength: rs.map(|v| Strength { value: f64::from(v), unit: Unit::Mg }),
            quantity: rq.map(f64::from),
            frequency: rf.map(f64::from),
            extra_dose: extra,
        };
        let mcg = Regimen {
            strength: rs.map(|v| Strength { value: f64::from(v) * 1000.0, unit: Unit::Mcg }),
            ..mg.clone()
        };
        let o_mcg = order(f64::from(strength) * 1000.0, Unit::Mcg, f64::from(qty), f64::from(freq));
        let base = evaluate_dosage(&mg, &o).verdict;
        prop_assert_eq!(evaluate_dosage(&mcg, &o).verdict, base);
        prop_assert_eq!(evaluate_dosage(&mg, &o_mcg).verdict, base);
    }

    #[test]
    fn spoken_regimen_round_trips(strength in 1u32..1000, freq in 1u32..7) {
        let phrase = match freq {
            1 => "once a day".to_string(),
            2 => "twice a day".to_string(),
            n => format!("{n} times a day"),
        };
        let r = parse_regimen(&format!("{strength} mg {phrase}"));
        prop_assert_eq!(r.strength, Some(Strength { value: f64::from(strength), unit: Unit::Mg }));
        prop_assert_eq!(r.frequency, Some(f64::from(freq)));
    }

    #[test]
    fn task_queue_conserves_and_stays_sorted(ops in proptest::collection::vec(op(), 1..60)) {
        let mut q = TaskQueue::new();
        let mut changes = Vec::new();
        let mut turn = 0u32;
        for op in ops {
            match op {
                Op::Add { agent, priority, ttl, key } => {
                    let mut p = ProposedTask::new(priority, format!("task at {turn}"));
                    p.ttl_turns = ttl;
                    p.supersede_key = key.map(|k| format!("k{k}"));
                    q.add(AGENTS[agent as usize], p, turn, 3, &mut changes);
                }
                Op::Consume(ids) => {
                    let ids: Vec<TaskId> = ids.into_iter().map(|i| TaskId(u64::from(i))).collect();
                    q.consume(&ids, &mut changes);
                }
                Op::Collect => {
                    turn += 1;
                    q.garbage_collect(turn, &mut changes);
                    prop_assert!(q.active().iter().all(|t| !t.is_stale(turn)));
                }
            }
            let s = q.stats();
            prop_assert_eq!(s.created, s.consumed + s.expired + q.active().len() as u64);
            let keys: Vec<_> = q.active().iter().map(|t| t.sort_key()).collect();
            prop_assert!(keys.windows(2).all(|w| w[0] <= w[1]));
            for w in q.active().windows(2) {
                if w[0].priority == w[1].priority && w[1].origin == AgentId::Intervention {
                    prop_assert_eq!(w[0].origin, AgentId::Intervention);
                }
            }
        }
    }

    #[test]
    fn prompt_render_parse_round_trip(
        tasks in proptest::collection::vec((0u8..8, 0u8..3, safe_text()), 0..5),
        turns in proptest::collection::vec((any::<bool>(), safe_text()), 0..6),
        objectives in proptest::collection::vec(safe_text(), 0..3),
        record in proptest::option::of(safe_text()),
    ) {
        let doc = PromptDoc {
            agent_name: "Ava".into(),
            facility: "Riverside Medical Center".into(),
            phase: Phase::MainConversation,
            recipient: "Mary Adams".into(),
            record,
            objectives: (!objectives.is_empty()).then(|| ObjectiveBlock {
                section_title: "Symptom check".into(),
                lookahead: false,
                items: objectives.iter().enumerate().map(|(i, t)| (format!("obj.{i}"), t.clone())).collect(),
            }),
            tasks: tasks
                .iter()
                .enumerate()
                .map(|(i, (a, p, t))| PromptTask { id: TaskId(i as u64 + 1), origin: AGENTS[*a as usize], priority: *p, text: t.clone() })
                .collect(),
            summary: None,
            conversation: turns
                .iter()
                .map(|(agent, t)| (if *agent { Speaker::Agent } else { Speaker::User }, t.clone()))
                .collect(),
        };
        let parsed = PromptDoc::parse(&doc.render());
        prop_assert_eq!(parsed, Some(doc));
    }

    #[test]
    fn embedding_cosine_is_bounded(a in safe_text(), b in safe_text()) {
        let (ea, eb) = (embed(&a), embed(&b));
        let s = cosine(&ea, &eb);
        prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&s));
        prop_assert!((s - cosine(&eb, &ea)).abs() < 1e-6);
        if ea.iter().any(|x| *x != 0.0) {
            prop_assert!((cosine(&ea, &ea) - 1.0).abs() < 1e-5);
        }
    }
}
