//! Fans each sample out to the eight mode workers, picks the best-fitting
//! mode, debounces the choice, and commits protection actions.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::defaults;
use crate::error::{invalid, DseError, Result};
use crate::estimator::ModelKind;
use crate::sample::Sample;
use crate::wire;
use crate::worker::{run_worker, Inbound, WorkerConfig, WorkerReply};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProtectionAction {
    None,
    TripAll,
    /// Single-pole trip of phase 0, 1 or 2.
    TripPhase(usize),
    Custom(String),
}

impl fmt::Display for ProtectionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtectionAction::None => f.write_str("None"),
            ProtectionAction::TripAll => f.write_str("TripAll"),
            ProtectionAction::TripPhase(p) => write!(f, "TripPhase{}", ['A', 'B', 'C'][*p]),
            ProtectionAction::Custom(s) => f.write_str(s),
        }
    }
}

impl FromStr for ProtectionAction {
    type Err = DseError;

    /// Known names are case-insensitive; any other token of letters, digits,
    /// `_`, `-` or `.` becomes a custom label.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "none" => ProtectionAction::None,
            "tripall" => ProtectionAction::TripAll,
            "tripphasea" => ProtectionAction::TripPhase(0),
            "tripphaseb" => ProtectionAction::TripPhase(1),
            "tripphasec" => ProtectionAction::TripPhase(2),
            _ => {
                let ok = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
                if !ok {
                    return Err(invalid(format!("invalid action label '{s}'")));
                }
                ProtectionAction::Custom(s.to_string())
            }
        })
    }
}

/// Action per mode, indexed by model id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTable([ProtectionAction; 8]);

impl Default for ActionTable {
    fn default() -> Self {
        ActionTable(ModelKind::ALL.map(|k| if k.is_fault() { ProtectionAction::TripAll } else { ProtectionAction::None }))
    }
}

impl ActionTable {
    pub fn get(&self, kind: ModelKind) -> &ProtectionAction {
        &self.0[kind.id()]
    }

    pub fn set(&mut self, kind: ModelKind, action: ProtectionAction) {
        self.0[kind.id()] = action;
    }

    /// Applies an override of the form `MODEL=ACTION`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, a) = spec
            .split_once('=')
            .ok_or_else(|| invalid(format!("action override '{spec}' is not MODEL=ACTION")))?;
        self.set(k.parse()?, a.parse()?);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorConfig {
    pub hysteresis_samples: usize,
    /// Samples whose best confidence is below this are flagged as blackout.
    pub min_confidence: f64,
    /// `None` waits indefinitely for every reply.
    pub reply_timeout: Option<Duration>,
    pub action_table: ActionTable,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            hysteresis_samples: defaults::HYSTERESIS_SAMPLES,
            min_confidence: 0.0,
            reply_timeout: None,
            action_table: ActionTable::default(),
        }
    }
}

impl OrchestratorConfig {
    /// Real-time default: twice the sample period.
    pub fn realtime_timeout(sample_period: f64) -> Duration {
        Duration::from_secs_f64(2.0 * sample_period)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(invalid(format!("min_confidence {} outside [0, 1]", self.min_confidence)));
        }
        if self.reply_timeout == Some(Duration::ZERO) {
            return Err(invalid("reply timeout must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrchestratorState {
    /// Argmax at the previous sample.
    pub prev_chosen: ModelKind,
    pub counter: usize,
    pub committed: ModelKind,
    pub committed_action: ProtectionAction,
}

impl Default for OrchestratorState {
    fn default() -> Self {
        OrchestratorState {
            prev_chosen: ModelKind::Unfaulted,
            counter: 0,
            committed: ModelKind::Unfaulted,
            committed_action: ProtectionAction::None,
        }
    }
}

/// Argmax of `confidences` (indexed by model id). Ties go to `prev_chosen`
/// when it is among the maxima, otherwise to the lowest id. NaN counts as 0.
pub fn select_model(confidences: &[f64; 8], prev_chosen: ModelKind) -> ModelKind {
    let c = confidences.map(|x| if x.is_nan() { 0.0 } else { x });
    let best = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if c[prev_chosen.id()] == best {
        return prev_chosen;
    }
    let id = c.iter().position(|&x| x == best).unwrap_or(0);
    ModelKind::ALL[id]
}

/// Confidence vector seen by the selector; non-estimates score 0.
pub fn reply_confidences(replies: &[WorkerReply]) -> [f64; 8] {
    let mut c = [0.0; 8];
    for r in replies {
        if r.is_estimate() {
            c[r.model.id()] = r.confidence;
        }
    }
    c
}

pub fn hysteresis_update(state: &OrchestratorState, chosen: ModelKind, config: &OrchestratorConfig) -> OrchestratorState {
    let counter = if chosen == state.prev_chosen { state.counter + 1 } else { 0 };
    let mut next = OrchestratorState { prev_chosen: chosen, counter, ..state.clone() };
    if counter > config.hysteresis_samples {
        next.committed = chosen;
        next.committed_action = config.action_table.get(chosen).clone();
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub chosen: ModelKind,
    pub committed: ModelKind,
    pub action: ProtectionAction,
    pub confidences: [f64; 8],
    /// Parameters reported by the chosen model, empty if it had no estimate.
    pub params: Vec<(&'static str, f64)>,
    pub blackout: bool,
    /// Models scored 0 because their worker died or timed out.
    pub degraded: Vec<ModelKind>,
    /// Wall time from broadcast to decision.
    pub latency: Duration,
}

pub const TRACE_HEADER: &str = "t,chosen,committed,action,c_U,c_AG,c_BG,c_CG,c_AB,c_BC,c_CA,c_3P,gf_or_R,L_opt";

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},{}", self.t, self.chosen, self.committed, self.action);
        for c in &self.confidences {
            row.push(',');
            row.push_str(&c.to_string());
        }
        let p = |k: usize| self.params.get(k).map(|(_, v)| v.to_string()).unwrap_or_default();
        row.push_str(&format!(",{},{}", p(0), p(1)));
        row
    }
}

/// Breaker instruction issued when the committed action changes.
#[derive(Debug, Clone, PartialEq)]
pub struct TripCommand {
    pub action: ProtectionAction,
    pub model: ModelKind,
    pub t: f64,
}

impl fmt::Display for TripCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TRIP {} model={} t={}", self.action, self.model, self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub record: TraceRecord,
    pub trip: Option<TripCommand>,
}

/// Message channel to one worker.
pub trait WorkerLink: Send {
    fn kind(&self) -> ModelKind;
    fn send(&mut self, sample: &Sample) -> Result<()>;
    /// Next reply; `Ok(None)` on timeout.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<WorkerReply>>;
    fn close(&mut self) -> Result<()>;
}

fn recv_from<T>(rx: &Receiver<T>, timeout: Option<Duration>, kind: ModelKind) -> Result<Option<T>> {
    let gone = || DseError::WorkerUnavailable(kind.id(), "reply channel closed".into());
    match timeout {
        None => rx.recv().map(Some).map_err(|_| gone()),
        Some(d) => match rx.recv_timeout(d) {
            Ok(v) => Ok(Some(v)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(gone()),
        },
    }
}

/// Worker running on its own thread in this process.
pub struct ThreadLink {
    kind: ModelKind,
    tx: Option<Sender<Inbound>>,
    rx: Receiver<WorkerReply>,
    handle: Option<JoinHandle<Result<()>>>,
}

impl ThreadLink {
    pub fn spawn(config: WorkerConfig) -> Result<Self> {
        config.validate()?;
        let kind = config.kind;
        let (tx_in, rx_in) = mpsc::channel::<Inbound>();
        let (tx_out, rx_out) = mpsc::channel::<WorkerReply>();
        let handle = std::thread::Builder::new()
            .name(format!("worker-{}", kind.short()))
            .spawn(move || run_worker(config, rx_in, |r| tx_out.send(r).is_ok()))
            .map_err(|e| DseError::WorkerUnavailable(kind.id(), e.to_string()))?;
        Ok(ThreadLink { kind, tx: Some(tx_in), rx: rx_out, handle: Some(handle) })
    }
}

impl WorkerLink for ThreadLink {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn send(&mut self, sample: &Sample) -> Result<()> {
        let tx = self.tx.as_ref().ok_or_else(|| DseError::WorkerUnavailable(self.kind.id(), "closed".into()))?;
        tx.send(Inbound::Sample(*sample))
            .map_err(|_| DseError::WorkerUnavailable(self.kind.id(), "worker thread exited".into()))
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<WorkerReply>> {
        recv_from(&self.rx, timeout, self.kind)
    }

    fn close(&mut self) -> Result<()> {
        self.tx = None;
        if let Some(h) = self.handle.take() {
            h.join()
                .map_err(|_| DseError::WorkerUnavailable(self.kind.id(), "worker thread panicked".into()))??;
        }
        Ok(())
    }
}

impl Drop for ThreadLink {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Worker running as a child process speaking the line protocol.
pub struct ProcessLink {
    kind: ModelKind,
    child: Child,
    stdin: Option<ChildStdin>,
    rx: Receiver<Result<WorkerReply>>,
    reader: Option<JoinHandle<()>>,
}

impl ProcessLink {
    /// Spawns `cmd` with piped stdin and stdout.
    pub fn spawn(kind: ModelKind, mut cmd: Command) -> Result<Self> {
        let unavailable = |e: String| DseError::WorkerUnavailable(kind.id(), e);
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unavailable(format!("spawn failed: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().ok_or_else(|| unavailable("no stdout pipe".into()))?;
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::Builder::new()
            .name(format!("reader-{}", kind.short()))
            .spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let msg = match line {
                        Ok(l) => wire::decode_reply(&l),
                        Err(e) => Err(e.into()),
                    };
                    if tx.send(msg).is_err() {
                        break;
                    }
                }
            })
            .map_err(|e| unavailable(e.to_string()))?;
        Ok(ProcessLink { kind, child, stdin, rx, reader: Some(reader) })
    }
}

impl WorkerLink for ProcessLink {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn send(&mut self, sample: &Sample) -> Result<()> {
        let kind = self.kind;
        let stdin = self.stdin.as_mut().ok_or_else(|| DseError::WorkerUnavailable(kind.id(), "closed".into()))?;
        writeln!(stdin, "{}", wire::encode_sample(sample))
            .and_then(|_| stdin.flush())
            .map_err(|e| DseError::WorkerUnavailable(kind.id(), format!("write failed: {e}")))
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<WorkerReply>> {
        recv_from(&self.rx, timeout, self.kind)?.transpose()
    }

    fn close(&mut self) -> Result<()> {
        if let Some(mut stdin) = self.stdin.take() {
            let _ = writeln!(stdin, "{}", wire::SHUTDOWN);
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            match self.child.try_wait()? {
                Some(_) => break,
                None if Instant::now() >= deadline => {
                    log::warn!("worker {} did not exit; killing it", self.kind);
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    break;
                }
                None => std::thread::sleep(Duration::from_millis(2)),
            }
        }
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        Ok(())
    }
}

impl Drop for ProcessLink {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

pub struct Orchestrator {
    config: OrchestratorConfig,
    state: OrchestratorState,
    links: Vec<Box<dyn WorkerLink>>,
    alive: [bool; 8],
    last_t: Option<f64>,
}

impl Orchestrator {
    /// `links` must hold one worker per mode in id order.
    pub fn new(config: OrchestratorConfig, links: Vec<Box<dyn WorkerLink>>) -> Result<Self> {
        config.validate()?;
        let kinds: Vec<ModelKind> = links.iter().map(|l| l.kind()).collect();
        if kinds != ModelKind::ALL {
            return Err(invalid(format!("need one worker per mode in id order, got {kinds:?}")));
        }
        Ok(Orchestrator { config, state: OrchestratorState::default(), links, alive: [true; 8], last_t: None })
    }

    pub fn with_threads(config: OrchestratorConfig, worker: &WorkerConfig) -> Result<Self> {
        let mut links: Vec<Box<dyn WorkerLink>> = Vec::with_capacity(8);
        for kind in ModelKind::ALL {
            links.push(Box::new(ThreadLink::spawn(worker.for_kind(kind))?));
        }
        Self::new(config, links)
    }

    /// One child process per mode, built by `command`.
    pub fn with_processes(config: OrchestratorConfig, command: impl Fn(ModelKind) -> Command) -> Result<Self> {
        let mut links: Vec<Box<dyn WorkerLink>> = Vec::with_capacity(8);
        for kind in ModelKind::ALL {
            links.push(Box::new(ProcessLink::spawn(kind, command(kind))?));
        }
        Self::new(config, links)
    }

    pub fn state(&self) -> &OrchestratorState {
        &self.state
    }

    fn mark_dead(&mut self, id: usize, err: &DseError) {
        if self.alive[id] {
            log::error!("worker {} unavailable: {err}", ModelKind::ALL[id]);
        }
        self.alive[id] = false;
    }

    /// Processes one sample. Samples that are invalid or not newer than the
    /// previous one are skipped and yield `None`.
    pub fn process(&mut self, sample: Sample) -> Result<Option<Step>> {
        if let Err(e) = sample.validate() {
            log::warn!("skipping sample: {e}");
            return Ok(None);
        }
        if self.last_t.is_some_and(|prev| sample.t <= prev) {
            log::warn!("skipping out-of-order sample at t={}", sample.t);
            return Ok(None);
        }
        self.last_t = Some(sample.t);
        let start = Instant::now();
        for id in 0..8 {
            if self.alive[id] {
                if let Err(e) = self.links[id].send(&sample) {
                    self.mark_dead(id, &e);
                }
            }
        }

        let deadline = self.config.reply_timeout.map(|d| start + d);
        let mut replies: Vec<Option<WorkerReply>> = vec![None; 8];
        for (id, slot) in replies.iter_mut().enumerate() {
            if !self.alive[id] {
                continue;
            }
            loop {
                let remaining = deadline.map(|d| d.saturating_duration_since(Instant::now()));
                match self.links[id].recv(remaining) {
                    Ok(Some(r)) if r.t < sample.t => continue,
                    Ok(Some(r)) if r.model.id() == id && r.t == sample.t => {
                        *slot = Some(r);
                        break;
                    }
                    Ok(Some(r)) => {
                        let e = DseError::WorkerUnavailable(id, format!("unexpected reply {} at t={}", r.model, r.t));
                        self.mark_dead(id, &e);
                        break;
                    }
                    Ok(None) => {
                        log::warn!("worker {} timed out at t={}", ModelKind::ALL[id], sample.t);
                        break;
                    }
                    Err(e) => {
                        self.mark_dead(id, &e);
                        break;
                    }
                }
            }
        }

        let got: Vec<WorkerReply> = replies.iter().flatten().cloned().collect();
        let confidences = reply_confidences(&got);
        let degraded: Vec<ModelKind> =
            ModelKind::ALL.into_iter().filter(|k| replies[k.id()].is_none()).collect();
        let chosen = select_model(&confidences, self.state.prev_chosen);
        let before = self.state.committed_action.clone();
        self.state = hysteresis_update(&self.state, chosen, &self.config);
        let params = replies[chosen.id()]
            .as_ref()
            .filter(|r| r.is_estimate())
            .map(|r| r.params_out.clone())
            .unwrap_or_default();
        let best = confidences.iter().copied().fold(0.0, f64::max);
        let record = TraceRecord {
            t: sample.t,
            chosen,
            committed: self.state.committed,
            action: self.state.committed_action.clone(),
            confidences,
            params,
            blackout: best < self.config.min_confidence,
            degraded,
            latency: start.elapsed(),
        };
        let trip = (self.state.committed_action != before).then(|| TripCommand {
            action: self.state.committed_action.clone(),
            model: self.state.committed,
            t: sample.t,
        });
        Ok(Some(Step { record, trip }))
    }

    /// Closes every worker.
    pub fn shutdown(mut self) -> Result<()> {
        let mut first_err = None;
        for link in &mut self.links {
            if let Err(e) = link.close() {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    }
}

/// Drives `orch` over `samples`, handing each step to `sink`, then shuts the
/// workers down.
pub fn run_orchestrator<I, F>(mut orch: Orchestrator, samples: I, mut sink: F) -> Result<OrchestratorState>
where
    I: IntoIterator<Item = Sample>,
    F: FnMut(&Step) -> Result<()>,
{
    for s in samples {
        if let Some(step) = orch.process(s)? {
            sink(&step)?;
        }
    }
    let state = orch.state().clone();
    orch.shutdown()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf(v: &[(ModelKind, f64)]) -> [f64; 8] {
        let mut c = [0.0; 8];
        for (k, x) in v {
            c[k.id()] = *x;
        }
        c
    }

    #[test]
    fn select_unique_and_ties() {
        let mut c = [0.001; 8];
        c[0] = 0.01;
        c[1] = 0.99;
        assert_eq!(select_model(&c, ModelKind::Unfaulted), ModelKind::FaultAG);
        assert_eq!(select_model(&[0.0; 8], ModelKind::FaultCA), ModelKind::FaultCA);
        let c = conf(&[(ModelKind::FaultAB, 0.7), (ModelKind::FaultBC, 0.7)]);
        assert_eq!(select_model(&c, ModelKind::FaultBC), ModelKind::FaultBC);
        assert_eq!(select_model(&c, ModelKind::Unfaulted), ModelKind::FaultAB);
        let mut c = [0.0; 8];
        c[3] = f64::NAN;
        assert_eq!(select_model(&c, ModelKind::Fault3P), ModelKind::Fault3P);
    }

    #[test]
    fn seventh_identical_choice_commits() {
        let cfg = OrchestratorConfig::default();
        let mut st = OrchestratorState::default();
        for k in 0..7 {
            st = hysteresis_update(&st, ModelKind::FaultAG, &cfg);
            let expect = if k == 6 { ModelKind::FaultAG } else { ModelKind::Unfaulted };
            assert_eq!(st.committed, expect, "after {} samples", k + 1);
        }
        assert_eq!(st.committed_action, ProtectionAction::TripAll);
    }

    #[test]
    fn alternating_never_commits() {
        let cfg = OrchestratorConfig::default();
        let mut st = OrchestratorState::default();
        for k in 0..50 {
            let c = if k % 2 == 0 { ModelKind::FaultAB } else { ModelKind::FaultBC };
            st = hysteresis_update(&st, c, &cfg);
            assert_eq!(st.committed, ModelKind::Unfaulted);
        }
    }

    #[test]
    fn zero_hysteresis_commits_on_second() {
        let cfg = OrchestratorConfig { hysteresis_samples: 0, ..Default::default() };
        let st = hysteresis_update(&OrchestratorState::default(), ModelKind::FaultCG, &cfg);
        assert_eq!(st.committed, ModelKind::Unfaulted);
        let st = hysteresis_update(&st, ModelKind::FaultCG, &cfg);
        assert_eq!(st.committed, ModelKind::FaultCG);
    }

    #[test]
    fn actions_parse_and_print() {
        for s in ["None", "TripAll", "TripPhaseA", "TripPhaseC", "open-52a"] {
            assert_eq!(s.parse::<ProtectionAction>().unwrap().to_string(), s);
        }
        assert!("two words".parse::<ProtectionAction>().is_err());
        assert!("a,b".parse::<ProtectionAction>().is_err());
        let mut t = ActionTable::default();
        assert_eq!(t.get(ModelKind::Unfaulted), &ProtectionAction::None);
        assert_eq!(t.get(ModelKind::FaultBG), &ProtectionAction::TripAll);
        t.apply_override("AG=TripPhaseA").unwrap();
        assert_eq!(t.get(ModelKind::FaultAG), &ProtectionAction::TripPhase(0));
        assert!(t.apply_override("AG").is_err());
        assert!(t.apply_override("XX=TripAll").is_err());
    }

    #[test]
    fn trace_row_layout() {
        let r = TraceRecord {
            t: 0.25,
            chosen: ModelKind::Unfaulted,
            committed: ModelKind::Unfaulted,
            action: ProtectionAction::None,
            confidences: [1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            params: vec![("R", 18.432), ("L", 0.024)],
            blackout: false,
            degraded: vec![],
            latency: Duration::ZERO,
        };
        assert_eq!(r.csv_row(), "0.25,Unfaulted,Unfaulted,None,1,0.5,0,0,0,0,0,0,18.432,0.024");
        assert_eq!(r.csv_row().split(',').count(), TRACE_HEADER.split(',').count());
        let cmd = TripCommand { action: ProtectionAction::TripAll, model: ModelKind::FaultAG, t: 0.255 };
        assert_eq!(cmd.to_string(), "TRIP TripAll model=FaultAG t=0.255");
    }

    #[test]
    fn all_zero_stream_stays_unfaulted() {
        let orch = Orchestrator::with_threads(OrchestratorConfig::default(), &WorkerConfig::new(ModelKind::Unfaulted)).unwrap();
        let mut trips = 0;
        let mut rows = 0;
        let st = run_orchestrator(orch, (0..40).map(|k| Sample::zero(k as f64 * 5e-4)), |s| {
            rows += 1;
            trips += s.trip.is_some() as usize;
            assert_eq!(s.record.action, ProtectionAction::None);
            Ok(())
        })
        .unwrap();
        assert_eq!((rows, trips), (40, 0));
        assert_eq!(st.committed, ModelKind::Unfaulted);
    }
}
