//! Subcommand bodies. Each one resolves and validates its settings first
//! (failures there are usage errors), then does the work (runtime errors).

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use dse_core::analyze::{analyze as analyze_trace, read_trace, write_stats_csv, AnalysisConfig};
use dse_core::csv::{is_header, parse_sample, read_measurements, write_measurements};
use dse_core::defaults;
use dse_core::estimator::{build_model, estimate as fit, ModelKind, SolverOptions, SystemParams};
use dse_core::orchestrator::{ActionTable, Orchestrator, OrchestratorConfig, TRACE_HEADER};
use dse_core::replay::{replay as replay_file, ReplayConfig};
use dse_core::sim::{simulate as run_sim, CaseId, FaultSpec, ScenarioConfig, SourceMode};
use dse_core::wire::serve_worker;
use dse_core::worker::WorkerConfig;
use dse_core::MeasurementWindow;

use crate::config::ConfigFile;
use crate::{AnalyzeArgs, EstimateArgs, EstimatorArgs, ReplayArgs, RunArgs, SimulateArgs, SystemArgs, WorkerArgs};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult = std::result::Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> std::result::Result<T, Failure>;
    fn runtime(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn usage(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }

    fn runtime(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
}

fn system_params(a: &SystemArgs, f: &ConfigFile) -> anyhow::Result<SystemParams> {
    let d = SystemParams::default();
    let p = SystemParams {
        r_load: f.resolve(a.r_load, "r-load", d.r_load)?,
        l_load: f.resolve(a.l_load, "l-load", d.l_load)?,
        r_ground: f.resolve(a.r_ground, "r-ground", d.r_ground)?,
        f_nom: f.resolve(a.f_nom, "f-nom", d.f_nom)?,
        v_ll_rms: f.resolve(a.v_ll, "v-ll", d.v_ll_rms)?,
    };
    p.validate()?;
    Ok(p)
}

/// Worker settings for `kind`; `dt` falls back to `dt_fallback`, then the default.
fn worker_config(a: &EstimatorArgs, f: &ConfigFile, kind: ModelKind, dt_fallback: Option<f64>) -> anyhow::Result<WorkerConfig> {
    let solver = SolverOptions {
        max_iterations: f.resolve(a.max_iterations, "max-iterations", defaults::MAX_ITERATIONS)?,
        ..SolverOptions::default()
    };
    let dt = match f.resolve_opt(a.dt, "dt")? {
        Some(dt) => dt,
        None => dt_fallback.unwrap_or(defaults::SAMPLE_PERIOD),
    };
    let c = WorkerConfig {
        kind,
        window_n: f.resolve(a.window, "window", defaults::WINDOW_N)?,
        dt,
        params: system_params(&a.system, f)?,
        sigma_v: f.resolve(a.sigma_v, "sigma-v", defaults::SIGMA_V)?,
        sigma_i: f.resolve(a.sigma_i, "sigma-i", defaults::SIGMA_I)?,
        solver,
    };
    c.validate()?;
    Ok(c)
}

/// Flags that reproduce `c` in a worker process.
fn worker_flags(c: &WorkerConfig) -> Vec<String> {
    let p = &c.params;
    [
        ("--model", c.kind.id().to_string()),
        ("--window", c.window_n.to_string()),
        ("--dt", c.dt.to_string()),
        ("--sigma-v", c.sigma_v.to_string()),
        ("--sigma-i", c.sigma_i.to_string()),
        ("--max-iterations", c.solver.max_iterations.to_string()),
        ("--r-load", p.r_load.to_string()),
        ("--l-load", p.l_load.to_string()),
        ("--r-ground", p.r_ground.to_string()),
        ("--f-nom", p.f_nom.to_string()),
        ("--v-ll", p.v_ll_rms.to_string()),
    ]
    .into_iter()
    .flat_map(|(k, v)| [k.to_string(), v])
    .collect()
}

fn scenario(a: &SimulateArgs, f: &ConfigFile) -> anyhow::Result<ScenarioConfig> {
    let case: CaseId = f.resolve_opt(a.case.clone(), "case")?.unwrap_or_else(|| "I".into()).parse()?;
    let fault: Option<ModelKind> = f.resolve_opt(a.fault.clone(), "fault")?.map(|s| s.parse()).transpose()?;
    let mut c = match (case, fault) {
        (CaseId::Custom, Some(k)) => ScenarioConfig::custom(k),
        (CaseId::Custom, None) => bail!("--case custom needs --fault"),
        (_, Some(k)) if Some(k) != case.fault_kind() => {
            bail!("case {case} is a {} fault; use --case custom for {k}", case.fault_kind().map(|k| k.to_string()).unwrap_or_default())
        }
        _ => ScenarioConfig::for_case(case),
    };
    c.params = system_params(&a.system, f)?;
    if let Some(g) = f.resolve_opt(a.fault_g, "fault-g")? {
        c.fault = FaultSpec { conductance: g, ..c.fault };
    }
    c.t_fault = f.resolve(a.fault_time, "fault-time", c.t_fault)?;
    c.t_end = f.resolve(a.t_end, "t-end", c.t_end)?;
    c.fs_out = f.resolve(a.fs, "fs", c.fs_out)?;
    c.internal_step = f.resolve(a.step, "step", c.internal_step)?;
    c.noise_sigma_v = f.resolve(a.noise_v, "noise-v", c.noise_sigma_v)?;
    c.noise_sigma_i = f.resolve(a.noise_i, "noise-i", c.noise_sigma_i)?;
    c.seed = f.resolve(a.seed, "seed", c.seed)?;
    c.line_r = f.resolve(a.line_r, "line-r", c.line_r)?;
    c.line_l = f.resolve(a.line_l, "line-l", c.line_l)?;
    if let Some(s) = f.resolve_opt(a.source.clone(), "source")? {
        c.source_mode = s.parse()?;
    }
    c.i_limit = f.resolve_opt(a.ilim, "ilim")?;
    if c.i_limit.is_some() && c.source_mode == SourceMode::Ideal {
        log::warn!("--ilim has no effect with an ideal source");
    }
    c.validate()?;
    Ok(c)
}

fn create(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

/// Writes to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> io::Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

pub fn simulate(a: &SimulateArgs, f: &ConfigFile) -> CmdResult {
    let cfg = scenario(a, f).usage()?;
    let out = run_sim(&cfg).runtime()?;
    let writer = create(&a.out).runtime()?;
    write_measurements(writer, &out.samples).runtime()?;
    let fault = if cfg.fault.kind.is_fault() {
        format!("{} at {} s (G = {} S)", cfg.fault.kind, cfg.t_fault, cfg.fault.conductance)
    } else {
        "none".to_string()
    };
    let source = match cfg.source_mode {
        SourceMode::Ideal => "ideal".to_string(),
        SourceMode::CurrentLimited => {
            let peak = out.line_current.iter().flatten().fold(0.0f64, |m, i| m.max(i.abs()));
            format!("current-limited at {} A (peak line current {peak:.3} A)", cfg.effective_i_limit())
        }
    };
    let summary = format!(
        "wrote {}: rows={} fs={} Hz case={} fault={} source={}",
        a.out.display(),
        out.samples.len(),
        cfg.fs_out,
        cfg.case,
        fault,
        source
    );
    if a.out.as_os_str() == "-" {
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    Ok(())
}

pub fn replay(a: &ReplayArgs, f: &ConfigFile) -> CmdResult {
    let cfg = ReplayConfig {
        input: a.input.clone(),
        speed: f.resolve(a.speed, "speed", 1.0).usage()?,
        period_override: a.period,
    };
    cfg.validate().usage()?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match replay_file(&cfg, &mut out) {
        Ok(n) => {
            log::info!("replayed {n} rows");
            Ok(())
        }
        // downstream closed early: not our failure
        Err(dse_core::DseError::Io(msg)) if msg.contains("Broken pipe") => Ok(()),
        Err(e) => Err(e).runtime(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Hosting {
    Thread,
    Process,
}

pub fn run(a: &RunArgs, f: &ConfigFile) -> CmdResult {
    let worker = worker_config(&a.estimator, f, ModelKind::Unfaulted, None).usage()?;
    let hosting = match f.resolve_opt(a.workers.clone(), "workers").usage()?.as_deref() {
        None | Some("thread") | Some("threads") => Hosting::Thread,
        Some("process") | Some("processes") => Hosting::Process,
        Some(other) => return Err(anyhow!("--workers must be thread or process, got '{other}'")).usage(),
    };
    let mut table = ActionTable::default();
    let file_actions = f.raw("action").map(|s| s.split(';').map(str::to_string).collect::<Vec<_>>()).unwrap_or_default();
    for spec in file_actions.iter().chain(&a.actions) {
        table.apply_override(spec).usage()?;
    }
    let timeout = match f.resolve_opt(a.reply_timeout, "reply-timeout").usage()? {
        Some(s) if !(s > 0.0 && s.is_finite()) => return Err(anyhow!("--reply-timeout must be positive")).usage(),
        Some(s) => Some(Duration::from_secs_f64(s)),
        None => None,
    };
    let config = OrchestratorConfig {
        hysteresis_samples: f.resolve(a.hysteresis, "hysteresis", defaults::HYSTERESIS_SAMPLES).usage()?,
        min_confidence: f.resolve(a.min_confidence, "min-confidence", 0.0).usage()?,
        reply_timeout: if a.realtime {
            Some(timeout.unwrap_or_else(|| OrchestratorConfig::realtime_timeout(worker.dt)))
        } else {
            None
        },
        action_table: table,
    };
    config.validate().usage()?;
    let mut trace = create(&a.trace).runtime()?;

    let mut orch = match hosting {
        Hosting::Thread => Orchestrator::with_threads(config, &worker),
        Hosting::Process => {
            let exe = std::env::current_exe().context("locating own executable").runtime()?;
            Orchestrator::with_processes(config, |kind| {
                let mut cmd = Command::new(&exe);
                cmd.arg("worker").args(worker_flags(&worker.for_kind(kind)));
                cmd
            })
        }
    }
    .runtime()?;

    writeln!(trace, "{TRACE_HEADER}").runtime()?;
    let stdout = io::stdout();
    let mut cmds = stdout.lock();
    let mut latencies = Vec::new();
    let mut degraded = 0usize;
    for (idx, line) in io::stdin().lock().lines().enumerate() {
        let line = line.context("reading stdin").runtime()?;
        if line.trim().is_empty() || is_header(&line) {
            continue;
        }
        let sample = match parse_sample(&line) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("stdin line {}: skipped: {e}", idx + 1);
                continue;
            }
        };
        let Some(step) = orch.process(sample).runtime()? else {
            continue;
        };
        writeln!(trace, "{}", step.record.csv_row()).runtime()?;
        if let Some(trip) = &step.trip {
            writeln!(cmds, "{trip}").and_then(|_| cmds.flush()).runtime()?;
        }
        degraded += !step.record.degraded.is_empty() as usize;
        latencies.push(step.record.latency);
    }
    trace.flush().runtime()?;
    orch.shutdown().runtime()?;
    if degraded > 0 {
        log::warn!("{degraded} samples had missing worker replies");
    }
    if !latencies.is_empty() {
        latencies.sort();
        log::info!("{} samples; median per-sample latency {:?}", latencies.len(), latencies[latencies.len() / 2]);
    }
    Ok(())
}

pub fn estimate(a: &EstimateArgs, f: &ConfigFile) -> CmdResult {
    let kind: ModelKind = a.model.parse().usage()?;
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display())).runtime()?;
    let samples = read_measurements(BufReader::new(file)).runtime()?;
    let n = f.resolve(a.estimator.window, "window", defaults::WINDOW_N).usage()?;
    if samples.len() < n {
        return Err(anyhow!("{} has {} rows; need at least {n}", a.input.display(), samples.len())).runtime();
    }
    let tail = samples[samples.len() - n..].to_vec();
    let inferred = (n >= 2).then(|| (tail[n - 1].t - tail[0].t) / (n - 1) as f64);
    let cfg = worker_config(&a.estimator, f, kind, inferred).usage()?;
    let spec = build_model(kind, cfg.window_n, cfg.params, cfg.sigma_v, cfg.sigma_i).usage()?;
    let window = MeasurementWindow::new(tail, cfg.dt).runtime()?;
    let est = fit(&spec, &window, &cfg.solver).runtime()?;
    let mut text = format!(
        "model: {kind}\nt: {}\nJ: {}\ndof: {}\nconfidence: {}\niterations: {}\nconverged: {}\n",
        window.last_t(),
        est.j,
        est.dof,
        est.confidence,
        est.iterations,
        est.converged
    );
    for (name, v) in &est.params_out {
        text.push_str(&format!("{name}: {v}\n"));
    }
    emit(&text).runtime()
}

pub fn analyze(a: &AnalyzeArgs, f: &ConfigFile) -> CmdResult {
    let config = AnalysisConfig {
        fault_time: f.resolve_opt(a.fault_time, "fault-time").usage()?,
        threshold: f.resolve(a.threshold, "threshold", defaults::BLACKOUT_THRESHOLD).usage()?,
    };
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(anyhow!("--threshold must lie in [0, 1]")).usage();
    }
    let file = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display())).runtime()?;
    let rows = read_trace(BufReader::new(file)).runtime()?;
    let report = analyze_trace(&rows, &config).runtime()?;
    emit(&report.to_string()).runtime()?;
    if let Some(path) = &a.stats_csv {
        write_stats_csv(create(path).runtime()?, &report).runtime()?;
    }
    Ok(())
}

pub fn worker(a: &WorkerArgs, f: &ConfigFile) -> CmdResult {
    let kind: ModelKind = a.model.parse().usage()?;
    let cfg = worker_config(&a.estimator, f, kind, None).usage()?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_worker(cfg, stdin.lock(), stdout.lock()).runtime()
}
