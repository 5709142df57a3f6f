use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ACCLIMATIZATION_S: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("illegal transition {from} -> {to}")]
    Illegal { from: PhaseKind, to: PhaseKind },
    #[error("acclimatization still has {0:.1} s remaining")]
    StillAcclimatizing(f64),
    #[error("session is complete")]
    Complete,
    #[error("not in a task block")]
    NotInTaskBlock,
    #[error("no tasks left in this block")]
    NoMoreTasks,
}

/// Experimental conditions a session block can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Off,
    Synced,
    NonSynced,
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionKind::Off => "off",
            ConditionKind::Synced => "synced",
            ConditionKind::NonSynced => "non_synced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Idle,
    Intro,
    Acclimatization,
    TaskBlock,
    QuestionnairePause,
    Complete,
}

impl PhaseKind {
    /// Phases in which the participant's controller moves the arm.
    pub fn manual_enabled(self) -> bool {
        matches!(self, PhaseKind::Intro | PhaseKind::TaskBlock)
    }

    /// Whether one phase machine may move straight from `self` to `to`.
    pub fn can_precede(self, to: PhaseKind) -> bool {
        use PhaseKind::*;
        matches!(
            (self, to),
            (Idle, Intro)
                | (Intro, Acclimatization)
                | (Acclimatization, TaskBlock)
                | (TaskBlock, QuestionnairePause)
                | (QuestionnairePause, Acclimatization)
                | (QuestionnairePause, Complete)
        )
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseKind::Idle => "idle",
            PhaseKind::Intro => "intro",
            PhaseKind::Acclimatization => "acclimatization",
            PhaseKind::TaskBlock => "task_block",
            PhaseKind::QuestionnairePause => "questionnaire_pause",
            PhaseKind::Complete => "complete",
        })
    }
}

/// Session phase; `condition` is the index into the condition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum SessionPhase {
    Idle,
    Intro,
    Acclimatization { condition: usize, remaining_s: f64 },
    TaskBlock { condition: usize, tasks: Vec<String>, current: usize },
    QuestionnairePause { condition: usize },
    Complete,
}

impl SessionPhase {
    pub fn kind(&self) -> PhaseKind {
        match self {
            SessionPhase::Idle => PhaseKind::Idle,
            SessionPhase::Intro => PhaseKind::Intro,
            SessionPhase::Acclimatization { .. } => PhaseKind::Acclimatization,
            SessionPhase::TaskBlock { .. } => PhaseKind::TaskBlock,
            SessionPhase::QuestionnairePause { .. } => PhaseKind::QuestionnairePause,
            SessionPhase::Complete => PhaseKind::Complete,
        }
    }

    pub fn condition_index(&self) -> Option<usize> {
        match self {
            SessionPhase::Acclimatization { condition, .. }
            | SessionPhase::TaskBlock { condition, .. }
            | SessionPhase::QuestionnairePause { condition } => Some(*condition),
            _ => None,
        }
    }
}

/// Idle → Intro → (Acclimatization → TaskBlock → QuestionnairePause) per
/// condition → Complete.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMachine {
    phase: SessionPhase,
    order: Vec<ConditionKind>,
    acclimatization_s: f64,
    task_lists: Vec<Vec<String>>,
}

impl PhaseMachine {
    /// `task_lists[i]` is the task sequence of block `i`.
    pub fn new(order: Vec<ConditionKind>, acclimatization_s: f64, task_lists: Vec<Vec<String>>) -> Self {
        Self {
            phase: SessionPhase::Idle,
            order,
            acclimatization_s,
            task_lists,
        }
    }

    pub fn phase(&self) -> &SessionPhase {
        &self.phase
    }

    pub fn order(&self) -> &[ConditionKind] {
        &self.order
    }

    /// Condition of the block the session is in, if any.
    pub fn current_condition(&self) -> Option<ConditionKind> {
        self.phase.condition_index().and_then(|i| self.order.get(i).copied())
    }

    /// The legal successor of the current phase.
    pub fn next(&self) -> Result<SessionPhase, PhaseError> {
        Ok(match &self.phase {
            SessionPhase::Idle => SessionPhase::Intro,
            SessionPhase::Intro if self.order.is_empty() => SessionPhase::Complete,
            SessionPhase::Intro => self.acclimatization(0),
            SessionPhase::Acclimatization { condition, remaining_s } => {
                if *remaining_s > 0.0 {
                    return Err(PhaseError::StillAcclimatizing(*remaining_s));
                }
                SessionPhase::TaskBlock {
                    condition: *condition,
                    tasks: self.task_lists.get(*condition).cloned().unwrap_or_default(),
                    current: 0,
                }
            }
            SessionPhase::TaskBlock { condition, .. } => SessionPhase::QuestionnairePause { condition: *condition },
            SessionPhase::QuestionnairePause { condition } if condition + 1 < self.order.len() => {
                self.acclimatization(condition + 1)
            }
            SessionPhase::QuestionnairePause { .. } => SessionPhase::Complete,
            SessionPhase::Complete => return Err(PhaseError::Complete),
        })
    }

    fn acclimatization(&self, condition: usize) -> SessionPhase {
        SessionPhase::Acclimatization {
            condition,
            remaining_s: self.acclimatization_s,
        }
    }

    /// Moves to the legal successor and returns `(from, to)`.
    pub fn advance(&mut self) -> Result<(SessionPhase, SessionPhase), PhaseError> {
        let next = self.next()?;
        let prev = std::mem::replace(&mut self.phase, next.clone());
        Ok((prev, next))
    }

    /// Requests a specific target; rejected unless it is the legal successor.
    pub fn transition_to(&mut self, target: PhaseKind) -> Result<(SessionPhase, SessionPhase), PhaseError> {
        let from = self.phase.kind();
        if !from.can_precede(target) {
            return Err(PhaseError::Illegal { from, to: target });
        }
        let next = self.next()?;
        if next.kind() != target {
            return Err(PhaseError::Illegal { from, to: target });
        }
        self.advance()
    }

    /// Counts down acclimatization; returns true once the timer has run out.
    pub fn tick(&mut self, dt_s: f64) -> bool {
        if let SessionPhase::Acclimatization { remaining_s, .. } = &mut self.phase {
            *remaining_s = (*remaining_s - dt_s).max(0.0);
            // guard against float residue from summing many small steps
            if *remaining_s < 1e-9 {
                *remaining_s = 0.0;
            }
            return *remaining_s == 0.0;
        }
        false
    }

    /// Advances the task pointer inside a task block, returning the new task.
    pub fn next_task(&mut self) -> Result<(usize, String), PhaseError> {
        match &mut self.phase {
            SessionPhase::TaskBlock { tasks, current, .. } => {
                if *current + 1 >= tasks.len() {
                    return Err(PhaseError::NoMoreTasks);
                }
                *current += 1;
                Ok((*current, tasks[*current].clone()))
            }
            _ => Err(PhaseError::NotInTaskBlock),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine() -> PhaseMachine {
        PhaseMachine::new(
            vec![ConditionKind::Synced, ConditionKind::NonSynced],
            60.0,
            vec![vec!["a".into(), "b".into()], vec!["c".into()]],
        )
    }

    #[test]
    fn full_walk() {
        let mut m = machine();
        let mut kinds = vec![m.phase().kind()];
        loop {
            m.tick(60.0);
            match m.advance() {
                Ok((_, to)) => kinds.push(to.kind()),
                Err(PhaseError::Complete) => break,
                Err(e) => panic!("{e}"),
            }
        }
        use PhaseKind::*;
        assert_eq!(
            kinds,
            [
                Idle,
                Intro,
                Acclimatization,
                TaskBlock,
                QuestionnairePause,
                Acclimatization,
                TaskBlock,
                QuestionnairePause,
                Complete
            ]
        );
    }

    #[test]
    fn acclimatization_requires_full_minute() {
        let mut m = machine();
        m.advance().unwrap();
        m.advance().unwrap();
        assert!(matches!(m.advance(), Err(PhaseError::StillAcclimatizing(_))));
        for _ in 0..3000 {
            m.tick(0.02);
        }
        let (_, to) = m.advance().unwrap();
        assert_eq!(to.kind(), PhaseKind::TaskBlock);
        assert!(to.kind().manual_enabled());
    }

    #[test]
    fn task_block_cannot_jump_to_acclimatization() {
        let mut m = machine();
        m.advance().unwrap();
        m.advance().unwrap();
        m.tick(60.0);
        m.advance().unwrap();
        let before = m.phase().clone();
        assert_eq!(
            m.transition_to(PhaseKind::Acclimatization),
            Err(PhaseError::Illegal {
                from: PhaseKind::TaskBlock,
                to: PhaseKind::Acclimatization
            })
        );
        assert_eq!(m.phase(), &before);
    }

    #[test]
    fn second_pause_leads_to_complete() {
        let mut m = machine();
        for _ in 0..4 {
            m.tick(60.0);
            m.advance().unwrap();
        }
        assert_eq!(m.phase().kind(), PhaseKind::QuestionnairePause);
        assert!(m.transition_to(PhaseKind::Complete).is_err());
        for _ in 0..3 {
            m.tick(60.0);
            m.advance().unwrap();
        }
        assert_eq!(m.phase().kind(), PhaseKind::QuestionnairePause);
        let (_, to) = m.transition_to(PhaseKind::Complete).unwrap();
        assert_eq!(to, SessionPhase::Complete);
        assert_eq!(m.advance(), Err(PhaseError::Complete));
    }

    #[test]
    fn task_pointer() {
        let mut m = machine();
        assert_eq!(m.next_task(), Err(PhaseError::NotInTaskBlock));
        for _ in 0..3 {
            m.tick(60.0);
            m.advance().unwrap();
        }
        assert_eq!(m.next_task().unwrap(), (1, "b".to_string()));
        assert_eq!(m.next_task(), Err(PhaseError::NoMoreTasks));
        assert_eq!(m.current_condition(), Some(ConditionKind::Synced));
    }
}
