//! Per-turn orchestration: fan out the triggered support agents, fold
//! their outputs into the state and task queue, assemble the primary
//! prompt, and commit the exchange.
//!
//! A turn is computed on a snapshot and committed only if it completes
//! without cancellation, so a preempted turn leaves no trace.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::agent::{render_agent_prompt, AgentDescriptor, AgentMode, AgentOutput, AgentPrompt, PrimaryBackend, Resources, RuleBackend, TurnContext};
use crate::checklist::window_objectives;
use crate::error::{BackendError, StepError};
use crate::model::{AgentId, ConversationHistory, PatientProfile, Speaker, TaskId};
use crate::prompt::{conversation_of, objective_block, render_record, PromptDoc, PromptTask};
use crate::state::{Finding, Phase, StateDelta, SystemState, Transition, HANDOFF_KEY};
use crate::tasks::{TaskChange, TaskStats};
use crate::transcript::{Clock, Event, Transcript};

/// Shared cancellation flag for one in-flight turn.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Wait for every agent, including async ones, before each turn.
    pub deterministic: bool,
    /// Per-agent deadline outside deterministic mode.
    pub agent_timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            deterministic: true,
            agent_timeout: Duration::from_millis(2000),
        }
    }
}

/// Result of one committed turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub turn: u32,
    pub response: String,
    pub injected: Vec<TaskId>,
    pub consumed: Vec<TaskId>,
    pub phase: Phase,
    #[serde(skip)]
    pub prompt: String,
    #[serde(skip)]
    pub outputs: Vec<AgentOutput>,
    #[serde(skip)]
    pub latency: Duration,
}

/// Standard agent set, each on its rule backend, in prompt-rank order.
pub fn rule_agents() -> Vec<AgentDescriptor> {
    use std::sync::Arc as A;
    vec![
        AgentDescriptor::new(AgentId::Privacy, A::new(RuleBackend(crate::privacy::evaluate))),
        AgentDescriptor::new(AgentId::Intervention, A::new(RuleBackend(crate::intervention::evaluate))),
        AgentDescriptor::new(AgentId::Checklist, A::new(RuleBackend(crate::checklist::evaluate))),
        AgentDescriptor::new(AgentId::Medication, A::new(RuleBackend(crate::medication::evaluate))),
        AgentDescriptor::new(AgentId::Labs, A::new(RuleBackend(crate::labs::evaluate))),
        AgentDescriptor::new(AgentId::Policy, A::new(RuleBackend(crate::policy::evaluate))),
        AgentDescriptor::new(AgentId::Nutrition, A::new(RuleBackend(crate::nutrition::evaluate))),
        AgentDescriptor::new(AgentId::Summary, A::new(RuleBackend(crate::summary::evaluate))),
    ]
}

type AsyncResult = (AgentId, u32, Result<AgentOutput, BackendError>);

/// Everything a turn computation reads; owned so it can run on a thread.
#[derive(Clone)]
struct Snapshot {
    resources: Arc<Resources>,
    profile: Arc<PatientProfile>,
    recipient: String,
    agents: Arc<Vec<AgentDescriptor>>,
    primary: Arc<dyn PrimaryBackend>,
    state: SystemState,
    history: ConversationHistory,
    options: RunOptions,
    delivered: Vec<(u32, AgentOutput)>,
}

/// A computed but uncommitted turn.
pub struct Prepared {
    utterance: String,
    turn: u32,
    state: SystemState,
    history: ConversationHistory,
    events: Vec<Event>,
    prompt: String,
    injected: Vec<TaskId>,
    response: String,
    consumed: Vec<TaskId>,
    outputs: Vec<AgentOutput>,
    spawned: Vec<JoinHandle<AsyncResult>>,
    started: Instant,
}

fn transition_event(t: &Transition) -> Event {
    Event::StateTransition {
        what: t.what.into(),
        from: t.from.clone(),
        to: t.to.clone(),
    }
}

fn task_events(changes: Vec<TaskChange>, events: &mut Vec<Event>) {
    for c in changes {
        events.push(match c {
            TaskChange::Created(task) => Event::TaskCreated { task },
            TaskChange::Expired(t) => Event::TaskExpired { id: t.id, origin: t.origin },
            TaskChange::Consumed(t) => Event::TaskConsumed { id: t.id, origin: t.origin },
        });
    }
}

/// Assembles the primary prompt from state and history.
pub fn assemble_prompt(
    resources: &Resources,
    profile: &PatientProfile,
    recipient: &str,
    state: &SystemState,
    history: &ConversationHistory,
    pending: Option<&str>,
) -> PromptDoc {
    let settings = &resources.settings;
    let script = &resources.script;
    let post = state.phase.is_post_verification() && state.profile_loaded;
    let objectives = match state.phase {
        Phase::Terminated | Phase::Escalated => None,
        _ if post => window_objectives(script, &state.checklist, settings.window_size)
            .map(|(i, look, objs)| objective_block(&script.sections[i].title, look, &objs)),
        _ => script.sections.first().and_then(|s| {
            let pending: Vec<_> = s
                .objectives
                .iter()
                .filter(|o| !state.checklist.covered.contains_key(&o.id))
                .take(settings.window_size)
                .collect();
            (!pending.is_empty()).then(|| objective_block(&s.title, false, &pending))
        }),
    };
    PromptDoc {
        agent_name: settings.agent_name.clone(),
        facility: settings.facility.clone(),
        phase: state.phase,
        recipient: recipient.to_string(),
        record: post.then(|| render_record(profile, &resources.tables)),
        objectives,
        tasks: state.tasks.active().iter().map(PromptTask::from).collect(),
        summary: history.rolling_summary.as_ref().map(|s| s.render()),
        conversation: conversation_of(history, pending),
    }
}

impl Snapshot {
    fn context(&self, utterance: &str, turn: u32) -> TurnContext {
        TurnContext {
            turn,
            user_turn_index: self.history.next_index(),
            history: self.history.clone(),
            utterance: utterance.to_string(),
            state: self.state.clone(),
            profile: self.state.profile_loaded.then(|| self.profile.clone()),
            resources: self.resources.clone(),
        }
    }

    fn prepare(self, utterance: String, cancel: &CancelToken) -> Result<Prepared, StepError> {
        let started = Instant::now();
        if self.state.phase == Phase::Terminated {
            return Err(StepError::Terminated);
        }
        let turn = self.state.turn_counter + 1;
        let ctx = Arc::new(self.context(&utterance, turn));
        let user_idx = ctx.user_turn_index;
        let mut events = vec![Event::UserTurn {
            index: user_idx,
            text: utterance.clone(),
        }];

        // Fan out.
        let (tx, rx) = mpsc::channel::<(usize, Result<AgentOutput, BackendError>)>();
        let mut expected = Vec::new();
        let mut spawned = Vec::new();
        for (i, d) in self.agents.iter().enumerate() {
            if !(d.trigger)(&ctx) {
                continue;
            }
            let prompt = AgentPrompt {
                agent_id: d.agent_id,
                text: render_agent_prompt(d.agent_id, &ctx),
                context: ctx.clone(),
            };
            let backend = d.backend.clone();
            match d.mode {
                AgentMode::Sync => {
                    expected.push(i);
                    let tx = tx.clone();
                    std::thread::spawn(move || {
                        let _ = tx.send((i, backend.evaluate(&prompt)));
                    });
                }
                AgentMode::Async => {
                    let id = d.agent_id;
                    spawned.push(std::thread::spawn(move || (id, user_idx, backend.evaluate(&prompt))));
                }
            }
        }
        drop(tx);
        let mut results: Vec<(usize, Result<AgentOutput, BackendError>)> = Vec::new();
        let deadline = started + self.options.agent_timeout;
        while results.len() < expected.len() {
            let got = if self.options.deterministic {
                rx.recv().ok()
            } else {
                rx.recv_timeout(deadline.saturating_duration_since(Instant::now())).ok()
            };
            match got {
                Some(r) => results.push(r),
                None => break,
            }
        }
        if cancel.is_cancelled() {
            return Err(StepError::Primary(BackendError::Cancelled));
        }
        for i in &expected {
            if !results.iter().any(|(j, _)| j == i) {
                events.push(Event::BackendTimeout {
                    agent: self.agents[*i].agent_id,
                    timeout_ms: self.options.agent_timeout.as_millis() as u64,
                });
            }
        }
        results.sort_by_key(|(i, _)| self.agents[*i].agent_id.rank());

        // Mailbox outputs (older) first, then this turn's in rank order.
        let mut ordered: Vec<(u32, AgentOutput)> = self.delivered.clone();
        for (i, r) in results {
            match r.and_then(|o| o.validate().map(|_| o)) {
                Ok(o) => ordered.push((user_idx, o)),
                Err(e) => events.push(Event::BackendFailure {
                    agent: self.agents[i].agent_id.to_string(),
                    error: e.to_string(),
                }),
            }
        }

        let mut state = self.state.clone();
        let mut history = self.history.clone();
        let ttl = self.resources.settings.ttl_turns;
        let mut outputs = Vec::new();
        for (at, out) in ordered {
            let mut changes = Vec::new();
            for d in &out.state_deltas {
                let mut transitions = Vec::new();
                let before = state.findings.len();
                let had_escalation = state.escalation.is_some();
                let derived = state.apply(out.agent_id, d, at, &mut transitions);
                events.extend(transitions.iter().map(transition_event));
                for f in &state.findings[before..] {
                    events.push(Event::Finding {
                        finding: serde_json::to_value(f).unwrap_or_default(),
                    });
                }
                if !had_escalation {
                    if let Some(e) = &state.escalation {
                        events.push(Event::Handoff {
                            origin: e.origin,
                            reason: e.reason.clone(),
                        });
                    }
                }
                if let StateDelta::SummaryRolled { evict_through, summary } = d {
                    history.turns.retain(|t| t.turn_index > *evict_through);
                    history.rolling_summary = Some(summary.clone());
                }
                for t in derived {
                    state.tasks.add(out.agent_id, t, turn, ttl, &mut changes);
                }
            }
            for t in &out.proposed_tasks {
                if state.phase != Phase::Terminated || out.agent_id == AgentId::Privacy || out.agent_id == AgentId::Checklist {
                    state.tasks.add(out.agent_id, t.clone(), turn, ttl, &mut changes);
                }
            }
            task_events(changes, &mut events);
            outputs.push(out);
        }
        let mut changes = Vec::new();
        state.tasks.garbage_collect(turn, &mut changes);
        task_events(changes, &mut events);

        let doc = assemble_prompt(&self.resources, &self.profile, &self.recipient, &state, &history, Some(&utterance));
        let prompt = doc.render();
        let injected: Vec<TaskId> = doc.tasks.iter().map(|t| t.id).collect();
        if cancel.is_cancelled() {
            return Err(StepError::Primary(BackendError::Cancelled));
        }
        let reply = self.primary.respond(&prompt).map_err(StepError::Primary)?;
        let consumed: Vec<TaskId> = reply.consumed_task_ids.iter().copied().filter(|id| injected.contains(id)).collect();
        if consumed
            .iter()
            .any(|id| state.tasks.get(*id).is_some_and(|t| t.supersede_key.as_deref() == Some(HANDOFF_KEY)))
        {
            state.handoff_confirmed = true;
        }
        let mut changes = Vec::new();
        state.tasks.consume(&consumed, &mut changes);

        history.push(Speaker::User, utterance.clone(), Vec::new());
        let agent_idx = history.push(Speaker::Agent, reply.response.clone(), injected.clone());
        events.push(Event::AgentTurn {
            index: agent_idx,
            text: reply.response.clone(),
            injected_tasks: injected.clone(),
        });
        task_events(changes, &mut events);
        state.turn_counter = turn;
        if state.phase == Phase::Terminated {
            events.push(Event::CallEnded {
                phase: state.phase.as_str().into(),
                reason: state.termination_reason.clone(),
            });
        }
        Ok(Prepared {
            utterance,
            turn,
            state,
            history,
            events,
            prompt,
            injected,
            response: reply.response,
            consumed,
            outputs,
            spawned,
            started,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub turns: u32,
    pub sections_completed: usize,
    pub sections_total: usize,
    pub tasks: TaskStats,
    pub tasks_active: usize,
    pub escalations: usize,
    pub verification_attempts: u32,
    /// Wall-clock latency per committed turn, in microseconds.
    pub latencies_us: Vec<u128>,
}

pub struct Orchestrator {
    resources: Arc<Resources>,
    profile: Arc<PatientProfile>,
    recipient: String,
    agents: Arc<Vec<AgentDescriptor>>,
    primary: Arc<dyn PrimaryBackend>,
    state: SystemState,
    history: ConversationHistory,
    transcript: Transcript,
    options: RunOptions,
    /// Async outputs from committed turns awaiting delivery.
    mailbox: Vec<JoinHandle<AsyncResult>>,
    ready: Vec<(u32, AgentOutput)>,
    prompts: Vec<String>,
    latencies: Vec<Duration>,
}

impl Orchestrator {
    pub fn new(
        resources: Arc<Resources>,
        profile: Arc<PatientProfile>,
        agents: Vec<AgentDescriptor>,
        primary: Arc<dyn PrimaryBackend>,
        clock: Box<dyn Clock>,
        options: RunOptions,
    ) -> Self {
        let max = resources.settings.max_attempts;
        Self {
            recipient: profile.name.clone(),
            resources,
            profile,
            agents: Arc::new(agents),
            primary,
            state: SystemState::new(max),
            history: ConversationHistory::new(),
            transcript: Transcript::new(clock),
            options,
            mailbox: Vec::new(),
            ready: Vec::new(),
            prompts: Vec::new(),
            latencies: Vec::new(),
        }
    }

    /// Replaces the state and history, for isolated single-turn evaluation.
    pub fn with_snapshot(mut self, state: SystemState, history: ConversationHistory) -> Self {
        self.state = state;
        self.history = history;
        self
    }

    pub fn with_transcript(mut self, t: Transcript) -> Self {
        self.transcript = t;
        self
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn history(&self) -> &ConversationHistory {
        &self.history
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }

    pub fn resources(&self) -> &Arc<Resources> {
        &self.resources
    }

    pub fn profile(&self) -> &PatientProfile {
        &self.profile
    }

    /// Every primary prompt assembled so far, opening included.
    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn is_finished(&self) -> bool {
        self.state.phase == Phase::Terminated
    }

    /// Produces the opening agent turn.
    pub fn start(&mut self) -> Result<String, StepError> {
        if !self.history.turns.is_empty() {
            return Ok(self.history.last_agent().map(|t| t.text.clone()).unwrap_or_default());
        }
        let doc = assemble_prompt(&self.resources, &self.profile, &self.recipient, &self.state, &self.history, None);
        let prompt = doc.render();
        let reply = self.primary.respond(&prompt).map_err(StepError::Primary)?;
        let idx = self.history.push(Speaker::Agent, reply.response.clone(), Vec::new());
        self.prompts.push(prompt);
        self.transcript.record(
            0,
            &Event::AgentTurn {
                index: idx,
                text: reply.response.clone(),
                injected_tasks: Vec::new(),
            },
        );
        Ok(reply.response)
    }

    fn collect_mailbox(&mut self) {
        let pending = std::mem::take(&mut self.mailbox);
        for h in pending {
            if self.options.deterministic || h.is_finished() {
                if let Ok((agent, at, r)) = h.join() {
                    match r.and_then(|o| o.validate().map(|_| o)) {
                        Ok(o) => self.ready.push((at, o)),
                        Err(e) => self.transcript.record(
                            self.state.turn_counter,
                            &Event::BackendFailure {
                                agent: agent.to_string(),
                                error: e.to_string(),
                            },
                        ),
                    }
                }
            } else {
                self.mailbox.push(h);
            }
        }
    }

    fn snapshot(&mut self) -> Snapshot {
        self.collect_mailbox();
        Snapshot {
            resources: self.resources.clone(),
            profile: self.profile.clone(),
            recipient: self.recipient.clone(),
            agents: self.agents.clone(),
            primary: self.primary.clone(),
            state: self.state.clone(),
            history: self.history.clone(),
            options: self.options.clone(),
            delivered: self.ready.clone(),
        }
    }

    fn commit(&mut self, p: Prepared) -> StepOutcome {
        for e in &p.events {
            self.transcript.record(p.turn, e);
        }
        self.state = p.state;
        self.history = p.history;
        self.ready.clear();
        self.mailbox.extend(p.spawned);
        self.prompts.push(p.prompt.clone());
        let latency = p.started.elapsed();
        self.latencies.push(latency);
        log::debug!("turn {} committed: {:?}", p.turn, p.utterance);
        StepOutcome {
            turn: p.turn,
            response: p.response,
            injected: p.injected,
            consumed: p.consumed,
            phase: self.state.phase,
            prompt: p.prompt,
            outputs: p.outputs,
            latency,
        }
    }

    /// Runs one full user turn synchronously.
    pub fn step(&mut self, utterance: &str) -> Result<StepOutcome, StepError> {
        let snap = self.snapshot();
        let p = snap.prepare(utterance.to_string(), &CancelToken::new())?;
        Ok(self.commit(p))
    }

    pub fn metrics(&self) -> RunMetrics {
        let script = &self.resources.script;
        RunMetrics {
            turns: self.state.turn_counter,
            sections_completed: self.state.checklist.completed.len(),
            sections_total: script.sections.len(),
            tasks: self.state.tasks.stats(),
            tasks_active: self.state.tasks.active().len(),
            escalations: self
                .state
                .findings
                .iter()
                .filter(|f| matches!(f, Finding::Escalation { .. }))
                .count(),
            verification_attempts: self.state.verification.attempts,
            latencies_us: self.latencies.iter().map(|d| d.as_micros()).collect(),
        }
    }
}

struct InFlight {
    utterance: String,
    cancel: CancelToken,
    handle: JoinHandle<Result<Prepared, StepError>>,
}

/// Drives an orchestrator with preemptible turns: a turn runs in the
/// background and can be cancelled and restarted when the user keeps
/// talking. Exactly one commit happens per user turn.
pub struct Session {
    orch: Orchestrator,
    inflight: Option<InFlight>,
}

impl Session {
    pub fn new(orch: Orchestrator) -> Self {
        Self { orch, inflight: None }
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn into_inner(mut self) -> Orchestrator {
        self.abandon();
        let Session { orch, .. } = self;
        orch
    }

    pub fn start(&mut self) -> Result<String, StepError> {
        self.orch.start()
    }

    /// Starts computing a turn in the background.
    pub fn begin_turn(&mut self, utterance: &str) {
        self.abandon();
        let snap = self.orch.snapshot();
        let cancel = CancelToken::new();
        let c = cancel.clone();
        let u = utterance.to_string();
        let handle = std::thread::spawn(move || snap.prepare(u, &c));
        self.inflight = Some(InFlight {
            utterance: utterance.to_string(),
            cancel,
            handle,
        });
    }

    /// Cancels the in-flight turn and restarts it with `addendum` appended.
    pub fn preempt(&mut self, addendum: &str) -> Result<(), StepError> {
        let f = self.inflight.take().ok_or(StepError::NoTurnInFlight)?;
        f.cancel.cancel();
        let _ = f.handle.join();
        let combined = format!("{} {}", f.utterance.trim_end(), addendum.trim_start());
        self.begin_turn(&combined);
        Ok(())
    }

    /// Waits for the in-flight turn and commits it.
    pub fn finish_turn(&mut self) -> Result<StepOutcome, StepError> {
        let f = self.inflight.take().ok_or(StepError::NoTurnInFlight)?;
        let prepared = f
            .handle
            .join()
            .map_err(|_| StepError::Primary(BackendError::Transport("turn worker panicked".into())))??;
        if f.cancel.is_cancelled() {
            return Err(StepError::Primary(BackendError::Cancelled));
        }
        Ok(self.orch.commit(prepared))
    }

    pub fn submit(&mut self, utterance: &str) -> Result<StepOutcome, StepError> {
        self.begin_turn(utterance);
        self.finish_turn()
    }

    fn abandon(&mut self) {
        if let Some(f) = self.inflight.take() {
            f.cancel.cancel();
            let _ = f.handle.join();
        }
    }
}
