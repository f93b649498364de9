//! Short-horizon task queue: creation, supersession, expiry and ordering.

use serde::{Deserialize, Serialize};

use crate::model::{AgentId, ProposedTask, Task, TaskId, TaskStatus};

/// Lifetime counters; `created == consumed + expired + active` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    pub created: u64,
    pub consumed: u64,
    pub expired: u64,
}

/// What happened to the queue during one operation, for the transcript.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskChange {
    Created(Task),
    Expired(Task),
    Consumed(Task),
}

/// Priority-ordered list of active tasks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskQueue {
    active: Vec<Task>,
    next_id: u64,
    stats: TaskStats,
}

impl TaskQueue {
    pub fn new() -> Self {
        Self {
            active: Vec::new(),
            next_id: 1,
            stats: TaskStats::default(),
        }
    }

    pub fn active(&self) -> &[Task] {
        &self.active
    }

    pub fn stats(&self) -> TaskStats {
        self.stats
    }

    pub fn get(&self, id: TaskId) -> Option<&Task> {
        self.active.iter().find(|t| t.id == id)
    }

    /// Adds a task; an active task with the same supersede key is expired first.
    pub fn add(
        &mut self,
        origin: AgentId,
        proposed: ProposedTask,
        turn: u32,
        default_ttl: u32,
        changes: &mut Vec<TaskChange>,
    ) -> TaskId {
        if let Some(key) = &proposed.supersede_key {
            let mut i = 0;
            while i < self.active.len() {
                if self.active[i].supersede_key.as_deref() == Some(key) {
                    let mut t = self.active.remove(i);
                    t.status = TaskStatus::Expired;
                    self.stats.expired += 1;
                    changes.push(TaskChange::Expired(t));
                } else {
                    i += 1;
                }
            }
        }
        let id = TaskId(self.next_id.max(1));
        self.next_id = id.0 + 1;
        let task = Task {
            id,
            origin,
            priority: proposed.priority,
            text: proposed.text,
            created_turn: turn,
            ttl_turns: proposed.ttl_turns.unwrap_or(default_ttl).max(1),
            status: TaskStatus::Active,
            supersede_key: proposed.supersede_key,
        };
        self.stats.created += 1;
        changes.push(TaskChange::Created(task.clone()));
        self.active.push(task);
        self.sort();
        id
    }

    /// Expires every task older than its ttl at `current_turn`.
    pub fn garbage_collect(&mut self, current_turn: u32, changes: &mut Vec<TaskChange>) {
        let (stale, keep): (Vec<Task>, Vec<Task>) =
            self.active.drain(..).partition(|t| t.is_stale(current_turn));
        self.active = keep;
        for mut t in stale {
            t.status = TaskStatus::Expired;
            self.stats.expired += 1;
            changes.push(TaskChange::Expired(t));
        }
    }

    /// Marks the given tasks consumed; unknown ids are ignored.
    pub fn consume(&mut self, ids: &[TaskId], changes: &mut Vec<TaskChange>) {
        for id in ids {
            if let Some(pos) = self.active.iter().position(|t| t.id == *id) {
                let mut t = self.active.remove(pos);
                t.status = TaskStatus::Consumed;
                self.stats.consumed += 1;
                changes.push(TaskChange::Consumed(t));
            }
        }
    }

    fn sort(&mut self) {
        self.active.sort_by_key(Task::sort_key);
    }
}

/// Returns only the tasks that are still active at `current_turn`.
pub fn garbage_collect(tasks: &[Task], current_turn: u32) -> Vec<Task> {
    tasks
        .iter()
        .filter(|t| t.status == TaskStatus::Active && !t.is_stale(current_turn))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn change_kinds(c: &[TaskChange]) -> Vec<&'static str> {
        c.iter()
            .map(|c| match c {
                TaskChange::Created(_) => "created",
                TaskChange::Expired(_) => "expired",
                TaskChange::Consumed(_) => "consumed",
            })
            .collect()
    }

    #[test]
    fn expires_after_ttl() {
        let mut q = TaskQueue::new();
        let mut ch = Vec::new();
        q.add(AgentId::Labs, ProposedTask::new(2, "a"), 5, 2, &mut ch);
        q.garbage_collect(7, &mut ch);
        assert_eq!(q.active().len(), 1);
        q.garbage_collect(8, &mut ch);
        assert!(q.active().is_empty());
        assert_eq!(change_kinds(&ch), vec!["created", "expired"]);
    }

    #[test]
    fn empty_list_is_identity() {
        assert!(garbage_collect(&[], 10).is_empty());
    }

    #[test]
    fn supersede_expires_previous() {
        let mut q = TaskQueue::new();
        let mut ch = Vec::new();
        q.add(AgentId::Intervention, ProposedTask::new(0, "q1").superseding("k"), 1, 2, &mut ch);
        q.add(AgentId::Intervention, ProposedTask::new(0, "q2").superseding("k"), 2, 2, &mut ch);
        assert_eq!(q.active().len(), 1);
        assert_eq!(q.active()[0].text, "q2");
        let s = q.stats();
        assert_eq!(s.created, s.consumed + s.expired + q.active().len() as u64);
    }

    #[test]
    fn intervention_beats_equal_priority() {
        let mut q = TaskQueue::new();
        let mut ch = Vec::new();
        q.add(AgentId::Privacy, ProposedTask::new(0, "p"), 1, 2, &mut ch);
        q.add(AgentId::Intervention, ProposedTask::new(0, "i"), 1, 2, &mut ch);
        assert_eq!(q.active()[0].origin, AgentId::Intervention);
    }

    proptest! {
        #[test]
        fn ordering_matches_exhaustive_sort(
            specs in proptest::collection::vec((0u8..4, 0usize..8), 0..20)
        ) {
            let mut q = TaskQueue::new();
            let mut ch = Vec::new();
            let mut oracle = Vec::new();
            for (i, (p, a)) in specs.iter().enumerate() {
                let agent = AgentId::ALL[*a];
                q.add(agent, ProposedTask::new(*p, format!("t{i}")), 1, 2, &mut ch);
                oracle.push((*p, agent != AgentId::Intervention, agent.rank(), i as u64 + 1));
            }
            // Independent ordering: insertion sort over the composite key.
            let mut sorted: Vec<(u8, bool, usize, u64)> = Vec::new();
            for k in oracle {
                let pos = sorted.iter().position(|s| *s > k).unwrap_or(sorted.len());
                sorted.insert(pos, k);
            }
            let got: Vec<u64> = q.active().iter().map(|t| t.id.0).collect();
            let want: Vec<u64> = sorted.iter().map(|k| k.3).collect();
            prop_assert_eq!(got, want);
            for w in q.active().windows(2) {
                prop_assert!(w[0].priority <= w[1].priority);
            }
        }

        #[test]
        fn conservation_holds(ops in proptest::collection::vec(0u8..3, 0..60)) {
            let mut q = TaskQueue::new();
            let mut ch = Vec::new();
            let mut turn = 1;
            for op in ops {
                match op {
                    0 => { q.add(AgentId::Labs, ProposedTask::new(2, "x"), turn, 2, &mut ch); }
                    1 => { let ids: Vec<_> = q.active().iter().take(1).map(|t| t.id).collect(); q.consume(&ids, &mut ch); }
                    _ => { turn += 1; q.garbage_collect(turn, &mut ch); }
                }
                let s = q.stats();
                prop_assert_eq!(s.created, s.consumed + s.expired + q.active().len() as u64);
                prop_assert!(q.active().iter().all(|t| !t.is_stale(turn)));
            }
        }
    }
}
