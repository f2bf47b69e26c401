//! Memory-controller side orchestration: bbop buffer, mat scoreboard, online
//! first-fit scheduling onto microprogram engines, mat-queue protocol, and
//! event-driven timing and energy accounting in virtual time.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::dram::{DramModule, VerticalLayout};
use crate::error::{Error, Result};
use crate::interconnect::TimingParams;
use crate::isa::{chip_select, MatRange};
use crate::scalar::Scalar;
use crate::uprog::{execute_command, Command, CommandKind, MicroProgram, UprogStats};

/// One bit per logical mat of the computation subarray.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatScoreboard {
    bits: u128,
}

impl MatScoreboard {
    fn mask(r: MatRange) -> u128 {
        let len = r.len() as u32;
        let ones = if len >= 128 { u128::MAX } else { (1u128 << len) - 1 };
        ones << r.begin()
    }

    pub fn is_free(&self, r: MatRange) -> bool {
        self.bits & Self::mask(r) == 0
    }

    pub fn reserve(&mut self, r: MatRange) -> Result<()> {
        if !self.is_free(r) {
            return Err(Error::Protocol(format!("mats {r} already reserved")));
        }
        self.bits |= Self::mask(r);
        Ok(())
    }

    pub fn release(&mut self, r: MatRange) {
        self.bits &= !Self::mask(r);
    }

    pub fn busy_count(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }
}

/// A resolved bbop ready for the control unit: its microprogram and the mats
/// it reserves while running.
#[derive(Debug, Clone)]
pub struct Job {
    pub id: u64,
    pub app: usize,
    pub reserve: MatRange,
    pub uprog: Arc<MicroProgram>,
    /// Rows read back from the attached DRAM the instant the job completes.
    pub capture: Option<VerticalLayout>,
}

impl Job {
    pub fn new(id: u64, app: usize, reserve: MatRange, uprog: Arc<MicroProgram>) -> Self {
        Self { id, app, reserve, uprog, capture: None }
    }
}

#[derive(Debug, Clone)]
struct Running {
    job: Job,
    pc: usize,
    next_time_is_completion: bool,
}

#[derive(Debug, Clone)]
struct Engine<T> {
    running: Option<Running>,
    next_time: T,
}

/// Per-chip FIFO of mat ranges travelling alongside row commands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatQueue {
    depth: usize,
    fifos: Vec<VecDeque<(usize, usize)>>,
    max_seen: usize,
    enqueued: usize,
    dequeued: usize,
}

impl MatQueue {
    pub fn new(chips: usize, depth: usize) -> Self {
        Self { depth, fifos: vec![VecDeque::new(); chips], max_seen: 0, enqueued: 0, dequeued: 0 }
    }

    pub fn enqueue(&mut self, chip: usize, span: (usize, usize)) -> Result<()> {
        let q = &mut self.fifos[chip];
        if q.len() == self.depth {
            return Err(Error::Protocol(format!("mat queue of chip {chip} overflows depth {}", self.depth)));
        }
        q.push_back(span);
        self.max_seen = self.max_seen.max(q.len());
        self.enqueued += 1;
        Ok(())
    }

    pub fn dequeue(&mut self, chip: usize) -> Result<(usize, usize)> {
        self.dequeued += 1;
        self.fifos[chip]
            .pop_front()
            .ok_or_else(|| Error::Protocol(format!("dequeue from empty mat queue of chip {chip}")))
    }

    pub fn max_depth_seen(&self) -> usize {
        self.max_seen
    }

    pub fn is_balanced(&self) -> bool {
        self.enqueued == self.dequeued && self.fifos.iter().all(VecDeque::is_empty)
    }

    pub fn totals(&self) -> (usize, usize) {
        (self.enqueued, self.dequeued)
    }
}

/// Step of the DRAM-side mat-queue protocol for one command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueOp {
    PreEnqueue,
    ActDequeueEnqueue,
    ActDequeue,
    Pre,
}

/// Mat-queue operations carried by a command: the first ACT is preceded by a
/// PRE that carries the range, and a second ACT re-enqueues it for its
/// partner.
pub fn queue_ops(cmd: &Command) -> &'static [QueueOp] {
    match cmd.kind {
        CommandKind::Ap { .. } => &[QueueOp::PreEnqueue, QueueOp::ActDequeue, QueueOp::Pre],
        _ => &[QueueOp::PreEnqueue, QueueOp::ActDequeueEnqueue, QueueOp::ActDequeue, QueueOp::Pre],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel<T> {
    /// Energy of one single-row activation spanning a whole chip row window.
    pub e_act: T,
    pub extra_activation_factor: T,
    /// Mats opened by one coarse-grained activation.
    pub mats_per_row: usize,
}

impl<T: Scalar> Default for EnergyModel<T> {
    fn default() -> Self {
        Self { e_act: T::one(), extra_activation_factor: T::ratio(22, 100), mats_per_row: 16 }
    }
}

impl<T: Scalar> EnergyModel<T> {
    pub fn tra_multiplier(&self) -> T {
        T::one() + T::from_count(2) * self.extra_activation_factor
    }

    /// Fraction of a full row window covered by `mats`.
    fn width(&self, mats: usize) -> T {
        T::ratio(mats as i64, self.mats_per_row as i64)
    }

    pub fn ap(&self, mats: usize) -> T {
        self.e_act * self.tra_multiplier() * self.width(mats)
    }

    pub fn aap(&self, mats: usize) -> T {
        self.e_act * (T::from_count(2) + self.extra_activation_factor) * self.width(mats)
    }

    /// Each move opens one row per touched mat twice-over (source and
    /// destination) and drives a write for `t_wr`.
    pub fn mov(&self, timing: &TimingParams<T>) -> T {
        let one_mat = self.e_act * self.width(1);
        T::from_count(2) * one_mat + one_mat * timing.t_wr / timing.t_ras
    }

    pub fn account(&self, cmd: &Command, timing: &TimingParams<T>) -> T {
        match cmd.kind {
            CommandKind::Aap { .. } => self.aap(cmd.mats.len()),
            CommandKind::Ap { .. } => self.ap(cmd.mats.len()),
            CommandKind::GbMov(_) | CommandKind::LcMov(_) => self.mov(timing),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig<T> {
    pub engines: usize,
    pub buffer_capacity: usize,
    pub mats: usize,
    pub mats_per_chip: usize,
    pub mat_queue_depth: usize,
    pub timing: TimingParams<T>,
    pub energy: EnergyModel<T>,
}

impl<T: Scalar> Default for ControlConfig<T> {
    fn default() -> Self {
        Self {
            engines: 8,
            buffer_capacity: 1024,
            mats: 128,
            mats_per_chip: 16,
            mat_queue_depth: 8,
            timing: TimingParams::default(),
            energy: EnergyModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event<T> {
    Launch { time: T, job: u64, app: usize, engine: usize, mats: MatRange },
    Issue { time: T, job: u64, app: usize, engine: usize, cmd: &'static str, mats: MatRange },
    Complete { time: T, job: u64, app: usize, engine: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion<T> {
    pub job: u64,
    pub app: usize,
    pub engine: usize,
    pub launched: T,
    pub time: T,
    pub captured: Option<Vec<u64>>,
}

/// Totals per application.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppCounters<T> {
    pub commands: UprogStats,
    pub energy: T,
}

pub struct ControlUnit<T> {
    cfg: ControlConfig<T>,
    now: T,
    buffer: VecDeque<Job>,
    scoreboard: MatScoreboard,
    engines: Vec<Engine<T>>,
    launched_at: Vec<T>,
    queue: MatQueue,
    dram: Option<DramModule>,
    trace: Option<String>,
    events: Vec<Event<T>>,
    keep_events: bool,
    apps: Vec<AppCounters<T>>,
    energy: T,
    commands: UprogStats,
}

impl<T: Scalar> ControlUnit<T> {
    pub fn new(cfg: ControlConfig<T>) -> Result<Self> {
        if cfg.engines == 0 || cfg.buffer_capacity == 0 || cfg.mat_queue_depth == 0 {
            return Err(Error::Geometry("engines, buffer and mat queue must be non-empty".into()));
        }
        if cfg.mats == 0 || cfg.mats > 128 || cfg.mats_per_chip == 0 {
            return Err(Error::Geometry(format!("{} mats do not fit the scoreboard", cfg.mats)));
        }
        cfg.timing.validate()?;
        let chips = cfg.mats.div_ceil(cfg.mats_per_chip);
        Ok(Self {
            engines: (0..cfg.engines).map(|_| Engine { running: None, next_time: T::zero() }).collect(),
            launched_at: vec![T::zero(); cfg.engines],
            queue: MatQueue::new(chips, cfg.mat_queue_depth),
            cfg,
            now: T::zero(),
            buffer: VecDeque::new(),
            scoreboard: MatScoreboard::default(),
            dram: None,
            trace: None,
            events: Vec::new(),
            keep_events: false,
            apps: Vec::new(),
            energy: T::zero(),
            commands: UprogStats::default(),
        })
    }

    /// Executes every issued command against `dram` as well as timing it.
    pub fn attach_dram(&mut self, dram: DramModule) {
        self.dram = Some(dram);
    }

    pub fn dram(&self) -> Option<&DramModule> {
        self.dram.as_ref()
    }

    pub fn dram_mut(&mut self) -> Option<&mut DramModule> {
        self.dram.as_mut()
    }

    pub fn take_dram(&mut self) -> Option<DramModule> {
        self.dram.take()
    }

    /// Starts collecting the textual event trace.
    pub fn enable_trace(&mut self) {
        self.trace = Some(String::new());
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    /// Keeps structured events for inspection.
    pub fn record_events(&mut self) {
        self.keep_events = true;
    }

    pub fn events(&self) -> &[Event<T>] {
        &self.events
    }

    pub fn config(&self) -> &ControlConfig<T> {
        &self.cfg
    }

    pub fn now(&self) -> T {
        self.now
    }

    pub fn energy(&self) -> T {
        self.energy
    }

    pub fn command_counts(&self) -> &UprogStats {
        &self.commands
    }

    pub fn app_counters(&self, app: usize) -> AppCounters<T> {
        self.apps.get(app).cloned().unwrap_or_default()
    }

    pub fn scoreboard(&self) -> &MatScoreboard {
        &self.scoreboard
    }

    pub fn mat_queue(&self) -> &MatQueue {
        &self.queue
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn in_flight(&self) -> usize {
        self.engines.iter().filter(|e| e.running.is_some()).count()
    }

    pub fn is_idle(&self) -> bool {
        self.buffer.is_empty() && self.in_flight() == 0
    }

    /// Reserved ranges of the running bbops.
    pub fn running_ranges(&self) -> Vec<MatRange> {
        self.engines.iter().filter_map(|e| e.running.as_ref().map(|r| r.job.reserve)).collect()
    }

    /// Queues a bbop; a full buffer hands the job back.
    pub fn dispatch(&mut self, job: Job) -> std::result::Result<(), Job> {
        if self.buffer.len() >= self.cfg.buffer_capacity || job.reserve.end() >= self.cfg.mats {
            return Err(job);
        }
        self.buffer.push_back(job);
        Ok(())
    }

    /// First-fit scan from oldest to newest; launches every bbop whose mats
    /// are all free while an engine is idle, skipping the rest.
    pub fn schedule_step(&mut self) -> Vec<u64> {
        let mut launched = Vec::new();
        let mut i = 0;
        while i < self.buffer.len() {
            let Some(engine) = self.engines.iter().position(|e| e.running.is_none()) else { break };
            if !self.scoreboard.is_free(self.buffer[i].reserve) {
                i += 1;
                continue;
            }
            let Some(job) = self.buffer.remove(i) else { break };
            // `is_free` was just checked
            let _ = self.scoreboard.reserve(job.reserve);
            launched.push(job.id);
            self.log(Event::Launch { time: self.now, job: job.id, app: job.app, engine, mats: job.reserve });
            self.launched_at[engine] = self.now;
            let empty = job.uprog.is_empty();
            self.engines[engine] =
                Engine { running: Some(Running { job, pc: 0, next_time_is_completion: empty }), next_time: self.now };
        }
        launched
    }

    /// Time of the next engine event, if anything is running.
    pub fn next_event_time(&self) -> Option<T> {
        self.engines
            .iter()
            .filter(|e| e.running.is_some())
            .map(|e| e.next_time)
            .reduce(|a, b| if b < a { b } else { a })
    }

    /// Processes the next instant at which anything happens: completions,
    /// launches into freed engines, then command issue in engine-id order.
    pub fn step(&mut self) -> Result<Vec<Completion<T>>> {
        self.schedule_step();
        let Some(t) = self.next_event_time() else { return Ok(Vec::new()) };
        self.now = t;
        let mut done = Vec::new();
        for id in 0..self.engines.len() {
            let finished = matches!(
                &self.engines[id],
                Engine { running: Some(r), next_time } if *next_time == t && r.next_time_is_completion
            );
            if finished {
                if let Some(r) = self.engines[id].running.take() {
                    let captured = match (&r.job.capture, &self.dram) {
                        (Some(layout), Some(dram)) => Some(dram.transpose_v2h(layout)?),
                        _ => None,
                    };
                    self.scoreboard.release(r.job.reserve);
                    self.log(Event::Complete { time: t, job: r.job.id, app: r.job.app, engine: id });
                    done.push(Completion {
                        job: r.job.id,
                        app: r.job.app,
                        engine: id,
                        launched: self.launched_at[id],
                        time: t,
                        captured,
                    });
                }
            }
        }
        self.schedule_step();
        let ready: Vec<usize> = (0..self.engines.len())
            .filter(|&id| {
                let e = &self.engines[id];
                e.next_time == t && e.running.as_ref().is_some_and(|r| !r.next_time_is_completion)
            })
            .collect();
        self.issue(&ready)?;
        Ok(done)
    }

    /// Advances virtual time by `dt`, processing every event up to the new
    /// time.
    pub fn tick(&mut self, dt: T) -> Result<Vec<Completion<T>>> {
        let until = self.now + dt;
        let mut out = Vec::new();
        loop {
            self.schedule_step();
            match self.next_event_time() {
                Some(t) if t <= until => out.extend(self.step()?),
                _ => break,
            }
        }
        self.now = until;
        Ok(out)
    }

    /// Runs until the buffer is empty and every engine idles.
    pub fn run_to_idle(&mut self) -> Result<Vec<Completion<T>>> {
        let mut out = Vec::new();
        while !self.is_idle() {
            let before = (self.now, self.buffer.len(), self.in_flight());
            out.extend(self.step()?);
            if self.in_flight() == 0 && (self.now, self.buffer.len(), self.in_flight()) == before {
                return Err(Error::Protocol("buffered bbops can never launch".into()));
            }
        }
        Ok(out)
    }

    fn issue(&mut self, ready: &[usize]) -> Result<()> {
        if ready.is_empty() {
            return Ok(());
        }
        let t = self.now;
        let cmds: Vec<(usize, Command, Job)> = ready
            .iter()
            .filter_map(|&id| {
                let r = self.engines[id].running.as_ref()?;
                Some((id, r.job.uprog.commands()[r.pc].clone(), r.job.clone()))
            })
            .collect();

        // Protocol phases across all engines issuing at this instant.
        let phases = [QueueOp::PreEnqueue, QueueOp::ActDequeueEnqueue, QueueOp::ActDequeue, QueueOp::Pre];
        for phase in phases {
            for (_, cmd, _) in &cmds {
                if !queue_ops(cmd).contains(&phase) {
                    continue;
                }
                for chip in 0..self.queue.fifos.len() {
                    let Some(span) = chip_select(cmd.mats, chip, self.cfg.mats_per_chip) else { continue };
                    match phase {
                        QueueOp::PreEnqueue => self.queue.enqueue(chip, span)?,
                        QueueOp::ActDequeueEnqueue => {
                            let got = self.queue.dequeue(chip)?;
                            self.queue.enqueue(chip, got)?;
                        }
                        QueueOp::ActDequeue => {
                            self.queue.dequeue(chip)?;
                        }
                        QueueOp::Pre => {}
                    }
                }
            }
        }

        for (id, cmd, job) in cmds {
            if let Some(dram) = self.dram.as_mut() {
                execute_command(dram, &cmd)?;
            }
            let e = self.cfg.energy.account(&cmd, &self.cfg.timing);
            self.energy += e;
            self.commands.record(&cmd);
            if self.apps.len() <= job.app {
                self.apps.resize(job.app + 1, AppCounters::default());
            }
            self.apps[job.app].energy += e;
            self.apps[job.app].commands.record(&cmd);
            self.log(Event::Issue { time: t, job: job.id, app: job.app, engine: id, cmd: cmd.name(), mats: cmd.mats });
            let lat = self.cfg.timing.latency(&cmd);
            let engine = &mut self.engines[id];
            engine.next_time = t + lat;
            if let Some(r) = engine.running.as_mut() {
                r.pc += 1;
                r.next_time_is_completion = r.pc == r.job.uprog.len();
            }
        }
        Ok(())
    }

    fn log(&mut self, ev: Event<T>) {
        if let Some(trace) = self.trace.as_mut() {
            let _ = match &ev {
                Event::Launch { time, job, app, engine, mats } => {
                    writeln!(trace, "t={} engine={engine} launch job={job} app={app} mats={mats}", time.render())
                }
                Event::Issue { time, engine, cmd, mats, .. } => {
                    writeln!(trace, "t={} engine={engine} cmd={cmd} mats={mats}", time.render())
                }
                Event::Complete { time, job, engine, .. } => {
                    writeln!(trace, "t={} engine={engine} complete job={job}", time.render())
                }
            };
        }
        if self.keep_events {
            self.events.push(ev);
        }
    }
}
