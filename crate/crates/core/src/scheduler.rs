//! Modality-specific early stopping over task sampling weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{SamplingWeights, Task};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Consecutive validation increases after which a task is switched off.
    pub consecutive_increase_limit: u32,
    /// Validation phases a switched-off task waits before it may restart.
    pub inactivity_restart_phases: u32,
    /// Tasks allowed to restart.
    pub restart_tasks: Vec<Task>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            consecutive_increase_limit: 3,
            inactivity_restart_phases: 10,
            restart_tasks: vec![Task::Vision, Task::Multimodal],
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.consecutive_increase_limit == 0 || self.inactivity_restart_phases == 0 {
            return Err(Error::Config("scheduler limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub init_weight: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_loss: Option<f64>,
    pub consecutive_increases: u32,
    pub phases_inactive: u32,
}

impl TaskState {
    fn new(init_weight: f64) -> Self {
        Self { init_weight, weight: init_weight, last_loss: None, consecutive_increases: 0, phases_inactive: 0 }
    }

    pub fn is_active(&self) -> bool {
        self.weight > 0.0
    }

    /// Had a stream to begin with but has been switched off.
    pub fn is_stopped(&self) -> bool {
        self.init_weight > 0.0 && self.weight == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ValIncrease,
    ValDecrease,
    Deactivate,
    Restart,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ValIncrease => "val_increase",
            EventKind::ValDecrease => "val_decrease",
            EventKind::Deactivate => "deactivate",
            EventKind::Restart => "restart",
        }
    }
}

/// One scheduler log record. Validation events carry the loss that caused them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerEvent {
    pub phase: u64,
    pub task: Task,
    pub kind: EventKind,
    pub weight_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

impl SchedulerEvent {
    /// `phase,task,event,weight_after,val_loss` with full float precision.
    pub fn to_line(&self) -> String {
        let loss = self.val_loss.map(|l| format!("{l:?}")).unwrap_or_default();
        format!("{},{},{},{:?},{}", self.phase, self.task, self.kind.as_str(), self.weight_after, loss)
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Validation(format!("bad scheduler event `{line}`"));
        if f.len() != 5 {
            return Err(bad());
        }
        let kind = match f[2] {
            "val_increase" => EventKind::ValIncrease,
            "val_decrease" => EventKind::ValDecrease,
            "deactivate" => EventKind::Deactivate,
            "restart" => EventKind::Restart,
            _ => return Err(bad()),
        };
        Ok(Self {
            phase: f[0].parse().map_err(|_| bad())?,
            task: f[1].parse().map_err(|_| bad())?,
            kind,
            weight_after: f[3].parse().map_err(|_| bad())?,
            val_loss: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad())?) },
        })
    }
}

/// Per-task weights and early-stopping counters, plus the phase index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub config: SchedulerConfig,
    pub phase: u64,
    pub text: TaskState,
    pub vision: TaskState,
    pub multimodal: TaskState,
}

impl SchedulerState {
    pub fn new(config: SchedulerConfig, init: SamplingWeights) -> Result<Self> {
        config.validate()?;
        for t in Task::ALL {
            let w = init.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("initial weight for {t} must be finite and non-negative")));
            }
        }
        Ok(Self {
            config,
            phase: 0,
            text: TaskState::new(init.text),
            vision: TaskState::new(init.vision),
            multimodal: TaskState::new(init.multimodal),
        })
    }

    pub fn task(&self, task: Task) -> &TaskState {
        match task {
            Task::Text => &self.text,
            Task::Vision => &self.vision,
            Task::Multimodal => &self.multimodal,
        }
    }

    fn task_mut(&mut self, task: Task) -> &mut TaskState {
        match task {
            Task::Text => &mut self.text,
            Task::Vision => &mut self.vision,
            Task::Multimodal => &mut self.multimodal,
        }
    }

    pub fn current_weights(&self) -> SamplingWeights {
        SamplingWeights::new(self.text.weight, self.vision.weight, self.multimodal.weight)
    }

    pub fn active_tasks(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.task(*t).is_active()).collect()
    }

    /// Some switched-off task will come back after enough phases.
    pub fn restart_pending(&self) -> bool {
        self.config.restart_tasks.iter().any(|t| self.task(*t).is_stopped())
    }

    /// Records a validation loss for an active task.
    pub fn on_validation(&mut self, task: Task, val_loss: f64) -> Result<Vec<SchedulerEvent>> {
        if !val_loss.is_finite() {
            return Err(Error::Usage(format!("non-finite validation loss for {task}")));
        }
        let phase = self.phase;
        let limit = self.config.consecutive_increase_limit;
        let s = self.task_mut(task);
        if !s.is_active() {
            return Err(Error::Usage(format!("validation reported for inactive task {task}")));
        }
        let mut events = Vec::new();
        let increased = s.last_loss.is_some_and(|last| val_loss > last);
        s.last_loss = Some(val_loss);
        if increased {
            s.weight /= 2.0;
            s.consecutive_increases += 1;
            events.push(SchedulerEvent {
                phase,
                task,
                kind: EventKind::ValIncrease,
                weight_after: s.weight,
                val_loss: Some(val_loss),
            });
            if s.consecutive_increases >= limit {
                s.weight = 0.0;
                s.phases_inactive = 0;
                events.push(SchedulerEvent { phase, task, kind: EventKind::Deactivate, weight_after: 0.0, val_loss: None });
            }
        } else {
            s.consecutive_increases = 0;
            events.push(SchedulerEvent {
                phase,
                task,
                kind: EventKind::ValDecrease,
                weight_after: s.weight,
                val_loss: Some(val_loss),
            });
        }
        Ok(events)
    }

    /// Closes the current phase; stopped restartable tasks age by one phase
    /// and come back at half their initial weight once old enough.
    pub fn on_phase_end(&mut self) -> Vec<SchedulerEvent> {
        let phase = self.phase;
        self.phase += 1;
        let mut events = Vec::new();
        for task in self.config.restart_tasks.clone() {
            let limit = self.config.inactivity_restart_phases;
            let s = self.task_mut(task);
            if !s.is_stopped() {
                continue;
            }
            s.phases_inactive += 1;
            if s.phases_inactive >= limit {
                s.weight = s.init_weight / 2.0;
                s.consecutive_increases = 0;
                s.phases_inactive = 0;
                s.last_loss = None;
                events.push(SchedulerEvent { phase, task, kind: EventKind::Restart, weight_after: s.weight, val_loss: None });
            }
        }
        events
    }

    /// Rebuilds a state from its initial value and event log by re-running
    /// the transitions, finishing after `phases` closed phases. Fails if the
    /// log is inconsistent with the transitions it claims.
    pub fn replay(initial: &SchedulerState, events: &[SchedulerEvent], phases: u64) -> Result<SchedulerState> {
        let mut s = initial.clone();
        let mut produced = Vec::new();
        for e in events {
            if e.kind == EventKind::Deactivate || e.kind == EventKind::Restart {
                continue;
            }
            while s.phase < e.phase {
                produced.extend(s.on_phase_end());
            }
            let loss = e.val_loss.ok_or_else(|| Error::Validation("validation event without a loss".into()))?;
            produced.extend(s.on_validation(e.task, loss)?);
        }
        while s.phase < phases {
            produced.extend(s.on_phase_end());
        }
        if produced != events {
            return Err(Error::Validation("event log does not match a replay of its own transitions".into()));
        }
        Ok(s)
    }
}
