use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use super::{KillCause, Killed, StepRecord, JobTrace};
use crate::store::{InFlightPut, ObjectKey, ObjectStore, Payload};
use crate::time::{Millis, VirtualClock};

/// One timed action: an optional store put that lands when the step ends.
#[derive(Clone, Debug)]
pub struct TimedStep {
    pub name: String,
    pub duration: Millis,
    pub put: Option<(ObjectKey, Payload)>,
}

impl TimedStep {
    pub fn delay(name: impl Into<String>, duration: Millis) -> Self {
        Self {
            name: name.into(),
            duration,
            put: None,
        }
    }

    pub fn put(
        name: impl Into<String>,
        duration: Millis,
        key: ObjectKey,
        payload: impl Into<Payload>,
    ) -> Self {
        Self {
            name: name.into(),
            duration,
            put: Some((key, payload.into())),
        }
    }
}

/// Builds the watchdog's action from the store as it is when the watchdog fires.
pub type WatchdogAction = Box<dyn FnOnce(&ObjectStore, Millis) -> Vec<TimedStep>>;

struct PendingWatchdog {
    fire_at: Millis,
    action: WatchdogAction,
}

struct RunningStep {
    step: TimedStep,
    start: Millis,
    end: Millis,
    put: Option<InFlightPut>,
}

#[derive(Default)]
struct Background {
    queue: VecDeque<TimedStep>,
    current: Option<RunningStep>,
    clock: Millis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WatchdogState {
    Cancelled,
    AlreadyFired,
    NotArmed,
}

/// A single process running in virtual time.
///
/// The main thread is driven by sequential calls ([`Job::step`], [`Job::put`],
/// [`Job::read`]). A watchdog, once armed, runs as a second timeline that is
/// advanced lazily so that its store effects interleave with the main
/// thread's in timestamp order. A kill stops both timelines at the same
/// instant; in-flight puts on either are discarded and nothing else runs.
pub struct Job {
    clock: VirtualClock,
    kill_at: Option<Millis>,
    kill_cause: KillCause,
    trace: JobTrace,
    watchdog: Option<PendingWatchdog>,
    background: Background,
    dead: bool,
}

impl Job {
    pub fn new(start: Millis) -> Self {
        Self {
            clock: VirtualClock::starting_at(start),
            kill_at: None,
            kill_cause: KillCause::Injected,
            trace: JobTrace::starting_at(start),
            watchdog: None,
            background: Background::default(),
            dead: false,
        }
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn kill_at(&self) -> Option<Millis> {
        self.kill_at
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    /// Schedules a kill; the earliest scheduled instant wins.
    pub fn schedule_kill(&mut self, at: Millis, cause: KillCause) {
        match self.kill_at {
            Some(existing) if existing <= at => {}
            _ => {
                self.kill_at = Some(at);
                self.kill_cause = cause;
            }
        }
    }

    pub fn trace(&self) -> &JobTrace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut JobTrace {
        &mut self.trace
    }

    pub fn into_trace(self) -> JobTrace {
        self.trace
    }

    pub fn kill_cause(&self) -> KillCause {
        self.kill_cause
    }

    pub fn step(
        &mut self,
        store: &mut ObjectStore,
        name: &str,
        duration: Millis,
    ) -> Result<Millis, Killed> {
        self.exec(store, name, duration, None)
    }

    pub fn put(
        &mut self,
        store: &mut ObjectStore,
        name: &str,
        key: ObjectKey,
        payload: impl Into<Payload>,
        duration: Millis,
    ) -> Result<Millis, Killed> {
        self.exec(store, name, duration, Some((key, payload.into())))
    }

    /// A step that observes the store at its completion instant.
    pub fn read<R>(
        &mut self,
        store: &mut ObjectStore,
        name: &str,
        duration: Millis,
        f: impl FnOnce(&ObjectStore) -> R,
    ) -> Result<R, Killed> {
        self.exec(store, name, duration, None)?;
        Ok(f(store))
    }

    pub fn run_steps(
        &mut self,
        store: &mut ObjectStore,
        steps: Vec<TimedStep>,
    ) -> Result<Millis, Killed> {
        for s in steps {
            self.exec(store, &s.name, s.duration, s.put)?;
        }
        Ok(self.now())
    }

    /// Blocks until the process is killed. Without a scheduled kill this
    /// never returns in virtual time, so the job is killed at `Millis::MAX`.
    pub fn hang(&mut self, store: &mut ObjectStore, name: &str) -> Killed {
        match self.exec(store, name, Millis::MAX, None) {
            Err(k) => k,
            Ok(_) => {
                let at = Millis::MAX;
                self.die(store, at);
                Killed { at }
            }
        }
    }

    pub fn arm_watchdog(&mut self, fire_at: Millis, action: WatchdogAction) {
        self.watchdog = Some(PendingWatchdog { fire_at, action });
    }

    /// Stops the watchdog unless it has already fired.
    pub fn disarm_watchdog(&mut self, store: &mut ObjectStore) -> WatchdogState {
        let now = self.now();
        self.advance_background(store, now);
        match self.watchdog.take() {
            Some(_) => WatchdogState::Cancelled,
            None if self.trace.watchdog_fired_at.is_some() => WatchdogState::AlreadyFired,
            None => WatchdogState::NotArmed,
        }
    }

    /// Process exit. A daemon watchdog dies with the process.
    pub fn exit(&mut self, store: &mut ObjectStore) {
        if self.dead {
            return;
        }
        let now = self.now();
        self.advance_background(store, now);
        self.watchdog = None;
        self.abort_background(store, now);
        self.trace.ended_at = Some(now);
    }

    fn exec(
        &mut self,
        store: &mut ObjectStore,
        name: &str,
        duration: Millis,
        put: Option<(ObjectKey, Payload)>,
    ) -> Result<Millis, Killed> {
        if self.dead {
            return Err(Killed {
                at: self.trace.killed_at.unwrap_or(self.now()),
            });
        }
        let start = self.now();
        self.advance_background(store, start);
        if let Some(k) = self.kill_at {
            if k <= start {
                self.die(store, k);
                return Err(Killed { at: k });
            }
        }
        let end = start.saturating_add(duration);
        let in_flight = put.map(|(key, payload)| store.begin_put(key, payload, start, duration));
        if let Some(k) = self.kill_at.filter(|&k| k < end) {
            self.advance_background(store, k);
            if let Some(p) = in_flight {
                store.abort(p, k);
            }
            self.trace.steps.push(StepRecord::new(name, start, k, false));
            self.die(store, k);
            return Err(Killed { at: k });
        }
        self.advance_background(store, end);
        if let Some(p) = in_flight {
            store.complete(p);
        }
        self.clock.sleep_until(end);
        self.trace.steps.push(StepRecord::new(name, start, end, true));
        Ok(end)
    }

    fn die(&mut self, store: &mut ObjectStore, at: Millis) {
        self.watchdog = None;
        self.abort_background(store, at);
        self.clock.sleep_until(at);
        self.trace.killed_at = Some(at);
        self.trace.kill_cause = Some(self.kill_cause);
        self.trace.ended_at = Some(at);
        self.dead = true;
    }

    fn abort_background(&mut self, store: &mut ObjectStore, at: Millis) {
        if let Some(run) = self.background.current.take() {
            if let Some(p) = run.put {
                store.abort(p, at);
            }
            self.trace
                .background
                .push(StepRecord::new(&run.step.name, run.start, at, false));
        }
        self.background.queue.clear();
    }

    /// Applies every background effect due at or before `t`.
    fn advance_background(&mut self, store: &mut ObjectStore, t: Millis) {
        if self.watchdog.as_ref().is_some_and(|w| w.fire_at <= t) {
            let w = self.watchdog.take().expect("checked above");
            self.trace.watchdog_fired_at = Some(w.fire_at);
            let steps = (w.action)(store, w.fire_at);
            self.background.clock = w.fire_at;
            self.background.queue.extend(steps);
        }
        loop {
            if self.background.current.is_none() {
                let start = self.background.clock;
                if start > t {
                    break;
                }
                let Some(step) = self.background.queue.pop_front() else {
                    break;
                };
                let end = start.saturating_add(step.duration);
                let put = step
                    .put
                    .clone()
                    .map(|(k, p)| store.begin_put(k, p, start, step.duration));
                self.background.current = Some(RunningStep {
                    step,
                    start,
                    end,
                    put,
                });
            }
            let run = self.background.current.as_ref().expect("set above");
            if run.end > t {
                break;
            }
            let run = self.background.current.take().expect("set above");
            if let Some(p) = run.put {
                store.complete(p);
            }
            self.trace
                .background
                .push(StepRecord::new(&run.step.name, run.start, run.end, true));
            self.background.clock = run.end;
            if self.background.queue.is_empty() {
                self.trace.watchdog_finished_at = Some(run.end);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn key(s: &str) -> ObjectKey {
        ObjectKey::new(s).unwrap()
    }

    #[test]
    fn kill_inside_put_discards_it() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.schedule_kill(15, KillCause::Injected);
        job.put(&mut store, "a", key("a"), "1", 10).unwrap();
        let err = job.put(&mut store, "b", key("b"), "2", 10).unwrap_err();
        assert_eq!(err.at, 15);
        assert!(store.contains(&key("a")));
        assert!(!store.contains(&key("b")));
        let trace = job.into_trace();
        assert_eq!(trace.killed_at, Some(15));
        assert_eq!(trace.steps.len(), 2);
        assert!(!trace.steps[1].completed);
    }

    #[test]
    fn kill_at_step_end_lets_step_complete() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.schedule_kill(10, KillCause::Injected);
        job.put(&mut store, "a", key("a"), "1", 10).unwrap();
        assert!(store.contains(&key("a")));
        assert!(job.step(&mut store, "next", 0).is_err());
        assert_eq!(job.trace().steps.len(), 1);
    }

    #[test]
    fn steps_after_death_never_run() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.schedule_kill(0, KillCause::Injected);
        assert!(job.put(&mut store, "a", key("a"), "1", 0).is_err());
        assert!(job.put(&mut store, "b", key("b"), "1", 0).is_err());
        assert!(store.is_empty());
    }

    #[test]
    fn watchdog_interleaves_with_hang() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.schedule_kill(1000, KillCause::Timeout);
        job.arm_watchdog(
            970,
            Box::new(|_, _| vec![TimedStep::put("rollback", 20, key("wd"), "x")]),
        );
        let killed = job.hang(&mut store, "hang");
        assert_eq!(killed.at, 1000);
        assert!(store.contains(&key("wd")));
        assert_eq!(store.get_object(&key("wd")).unwrap().put_completed_at, 990);
        let trace = job.into_trace();
        assert_eq!(trace.watchdog_fired_at, Some(970));
        assert_eq!(trace.watchdog_finished_at, Some(990));
    }

    #[test]
    fn kill_interrupts_background_step() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.schedule_kill(980, KillCause::Injected);
        job.arm_watchdog(
            970,
            Box::new(|_, _| vec![TimedStep::put("rollback", 20, key("wd"), "x")]),
        );
        job.hang(&mut store, "hang");
        assert!(!store.contains(&key("wd")));
        let trace = job.into_trace();
        assert_eq!(trace.background.len(), 1);
        assert!(!trace.background[0].completed);
        assert_eq!(trace.watchdog_finished_at, None);
    }

    #[test]
    fn disarm_before_fire_cancels() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.arm_watchdog(
            100,
            Box::new(|_, _| vec![TimedStep::put("rollback", 1, key("wd"), "x")]),
        );
        job.step(&mut store, "work", 50).unwrap();
        assert_eq!(job.disarm_watchdog(&mut store), WatchdogState::Cancelled);
        job.step(&mut store, "more", 500).unwrap();
        assert!(!store.contains(&key("wd")));
    }

    #[test]
    fn disarm_after_fire_reports_it() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.arm_watchdog(
            100,
            Box::new(|_, _| vec![TimedStep::put("rollback", 1, key("wd"), "x")]),
        );
        job.step(&mut store, "work", 500).unwrap();
        assert_eq!(job.disarm_watchdog(&mut store), WatchdogState::AlreadyFired);
        assert!(store.contains(&key("wd")));
    }

    #[test]
    fn exit_kills_daemon_watchdog_midway() {
        let mut store = ObjectStore::new();
        let mut job = Job::new(0);
        job.arm_watchdog(
            10,
            Box::new(|_, _| vec![TimedStep::put("rollback", 100, key("wd"), "x")]),
        );
        job.step(&mut store, "work", 50).unwrap();
        job.exit(&mut store);
        assert!(!store.contains(&key("wd")));
    }
}
