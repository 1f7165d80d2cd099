//! Configuration files, experiment dispatch and output formats.
//!
//! One TOML file drives every experiment. A minimal file:
//!
//! ```toml
//! [model]
//! c = 5.0
//! s = 1.0
//! kernel = { type = "powerlaw", beta = 0.5 }
//!
//! [initial]
//! agents = [
//!     { kind = "constant_velocity", x0 = [-1.0], v0 = [0.1] },
//!     { kind = "constant_velocity", x0 = [1.0], v0 = [-0.1] },
//! ]
//! ```
//!
//! Every run writes `summary.json` (configuration echo, invariant counts and
//! results) next to its CSV files; wall-clock time goes to `timing.json` so
//! that the other files are byte-identical across repeated runs.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::certificate::{
    beta_sweep, critical_speed_constant_data, feasibility_nonconstant, find_eta, Certification, Menu, SearchGrid,
};
use crate::diagnostics::check_decay;
use crate::dynamics::{
    consistency_sweep, simulate, InitialData, InvariantReport, Normalization, PicardConfig, Propagation, Scheme,
    SimConfig,
};
use crate::error::{Error, Result};
use crate::history::{fmt17, write_trajectory_csv, InitialPath, TrajectoryHistory};
use crate::influence::{InfluenceFunction, KernelSpec};
use crate::linalg::diameter;
use crate::meanfield::{
    particle_convergence_study, perturbation_study, InitialLaw, PositionLaw, Sampling, TailMode, VelocityLaw,
};

/// Environment variable overriding the worker-thread count.
pub const THREADS_ENV: &str = "FLOCKDELAY_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Certify,
    FlockRun,
    Meanfield,
    Sweep,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Certify => "certify",
            Experiment::FlockRun => "flock_run",
            Experiment::Meanfield => "meanfield",
            Experiment::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Propagation speed; `flock-run` replaces it with the certified speed.
    #[serde(default)]
    pub c: Option<f64>,
    pub s: f64,
    pub kernel: KernelSpec,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_one")]
    pub sample_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub propagation: Propagation,
    #[serde(default = "default_true")]
    pub align_breaks: bool,
    #[serde(default)]
    pub prune: bool,
    #[serde(default)]
    pub picard: Option<PicardConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSection {
    pub position: PositionLaw,
    pub velocity: VelocityLaw,
    #[serde(default)]
    pub tail: TailMode,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_window")]
    pub window: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub agents: Vec<InitialPath>,
    #[serde(default)]
    pub law: Option<LawSection>,
    /// Number of agents drawn from `law` outside the mean-field study.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub init_window: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    /// Fixed decay rate; found by `find_eta` when absent.
    pub eta: Option<f64>,
    pub menu: Menu,
    pub grid: SearchGrid,
    /// Kernel exponents for `certify --sweep`.
    pub sweep_betas: Option<Vec<f64>>,
    /// `flock-run` horizon; `20 / eta` when absent.
    pub horizon: Option<f64>,
    /// Slack of the decay check in `flock-run`.
    pub slack: f64,
    /// `flock-run` speed as a multiple of the certified speed.
    pub speed_factor: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            eta: None,
            menu: Menu::default(),
            grid: SearchGrid::default(),
            sweep_betas: None,
            horizon: None,
            slack: 1e-9,
            speed_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanfieldSection {
    pub n_list: Vec<usize>,
    /// Position perturbations for the stability study; skipped when empty.
    pub deltas: Vec<f64>,
    pub perturbation_n: usize,
    /// Use the `1/N` prefactor instead of `1/(N-1)`.
    pub meanfield_rescale: bool,
}

impl Default for MeanfieldSection {
    fn default() -> Self {
        Self {
            n_list: vec![4, 8, 16, 32],
            deltas: Vec::new(),
            perturbation_n: 8,
            meanfield_rescale: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub speeds: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            speeds: vec![10.0, 20.0, 40.0, 80.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trajectories: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectories: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    pub model: ModelSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub meanfield: MeanfieldSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default, skip_serializing)]
    pub output: OutputSection,
}

fn default_dt() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    10.0
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_window() -> f64 {
    1.0
}

impl RunConfig {
    /// Parses a TOML document without semantic validation.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(vec![format!("parse error at line {line}, column {col}: {msg}")])
                }
                None => Error::Config(vec![format!("parse error: {msg}")]),
            }
        })
    }

    /// Simulation settings at propagation speed `c`.
    pub fn sim_config(&self, c: f64) -> Result<SimConfig> {
        let m = &self.model;
        Ok(SimConfig {
            c,
            s: m.s,
            kernel: InfluenceFunction::from_spec(&m.kernel)?,
            dt: m.dt,
            horizon: m.horizon,
            sample_every: m.sample_every,
            scheme: m.scheme,
            normalization: m.normalization,
            propagation: m.propagation,
            align_breaks: m.align_breaks,
            prune: m.prune,
            picard: m.picard.clone(),
        })
    }

    pub fn law(&self) -> Option<InitialLaw> {
        self.initial.law.as_ref().map(|l| InitialLaw {
            position: l.position.clone(),
            velocity: l.velocity.clone(),
            tail: l.tail.clone(),
            sampling: l.sampling,
            s: self.model.s,
            window: l.window,
            seed: self.seed,
        })
    }

    /// Agents listed explicitly, or `initial.n` draws from the law.
    pub fn initial_data(&self) -> Result<InitialData> {
        let paths = if !self.initial.agents.is_empty() {
            self.initial.agents.clone()
        } else {
            let law = self
                .law()
                .ok_or_else(|| Error::Config(vec!["[initial] needs `agents` or a `law`".into()]))?;
            let n = self
                .initial
                .n
                .ok_or_else(|| Error::Config(vec!["[initial] needs `n` to draw agents from the law".into()]))?;
            law.sample_paths(n)?
        };
        Ok(InitialData {
            paths,
            init_window: self.initial.init_window,
        })
    }

    /// Every violated precondition for running `experiment`.
    pub fn violations(&self, experiment: Experiment) -> Vec<String> {
        let mut out = Vec::new();
        let m = &self.model;
        let needs_c = matches!(experiment, Experiment::Simulate | Experiment::Meanfield);
        let c = match m.c {
            Some(c) => c,
            None => {
                if needs_c {
                    out.push(format!("model.c is required for {}", experiment.name()));
                }
                2.0 * m.s.abs().max(1.0)
            }
        };
        match self.sim_config(c) {
            Ok(cfg) => out.extend(cfg.violations().into_iter().map(|v| format!("model: {v}"))),
            Err(e) => out.push(format!("model.kernel: {e}")),
        }
        if self.threads == Some(0) {
            out.push("threads must be >= 1".into());
        }
        let has_agents = !self.initial.agents.is_empty();
        if has_agents && self.initial.law.is_some() {
            out.push("[initial] takes either `agents` or a `law`, not both".into());
        }
        if let Some(law) = self.law() {
            out.extend(law.violations().into_iter().map(|v| format!("initial.law: {v}")));
        }
        if experiment == Experiment::Meanfield {
            if self.initial.law.is_none() {
                out.push("meanfield needs [initial.law]".into());
            }
            let n = &self.meanfield.n_list;
            if n.len() < 2 || n[0] == 0 || n.windows(2).any(|w| w[0] >= w[1]) {
                out.push(format!(
                    "meanfield.n_list must hold at least two strictly increasing sizes >= 1, got {n:?}"
                ));
            }
            if self.meanfield.deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                out.push("meanfield.deltas must be finite and >= 0".into());
            }
            if !self.meanfield.deltas.is_empty() && self.meanfield.perturbation_n == 0 {
                out.push("meanfield.perturbation_n must be >= 1".into());
            }
        } else if !has_agents && self.initial.law.is_none() {
            out.push("[initial] needs `agents` or a `law`".into());
        } else if !has_agents && self.initial.n.unwrap_or(0) == 0 {
            out.push("[initial] needs `n >= 1` to draw agents from the law".into());
        } else if has_agents {
            let data = InitialData {
                paths: self.initial.agents.clone(),
                init_window: self.initial.init_window,
            };
            out.extend(data.violations(m.s).into_iter().map(|v| format!("initial: {v}")));
        }
        if let Some(w) = self.initial.init_window {
            if !(w.is_finite() && w >= 0.0) {
                out.push(format!("initial.init_window must be finite and >= 0 (got {w})"));
            }
        }
        if matches!(experiment, Experiment::Certify | Experiment::FlockRun) {
            let cs = &self.certify;
            if let Some(eta) = cs.eta {
                if !(eta > 0.0 && eta < 1.0) {
                    out.push(format!("certify.eta must lie in (0, 1) (got {eta})"));
                }
            }
            if !(cs.slack.is_finite() && cs.slack >= 0.0) {
                out.push(format!("certify.slack must be finite and >= 0 (got {})", cs.slack));
            }
            if !(cs.speed_factor.is_finite() && cs.speed_factor >= 1.0) {
                out.push(format!("certify.speed_factor must be >= 1 (got {})", cs.speed_factor));
            }
            if let Some(h) = cs.horizon {
                if !(h.is_finite() && h > 0.0) {
                    out.push(format!("certify.horizon must be finite and > 0 (got {h})"));
                }
            }
            if let Some(b) = &cs.sweep_betas {
                if b.is_empty() || b.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    out.push("certify.sweep_betas must be a nonempty list of finite exponents >= 0".into());
                }
            }
        }
        if experiment == Experiment::Sweep {
            let sp = &self.sweep.speeds;
            if sp.is_empty() || sp.iter().any(|c| !(c.is_finite() && *c > m.s)) {
                out.push(format!(
                    "sweep.speeds must be a nonempty list of speeds > s, got {sp:?}"
                ));
            }
        }
        out
    }

    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let v = self.violations(experiment);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

/// Reads and validates a configuration file. The experiment named in the
/// file, if any, is validated too.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    let cfg = RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })?;
    let exp = cfg.experiment.unwrap_or(Experiment::Simulate);
    let mut v = cfg.violations(exp);
    if cfg.experiment.is_none() {
        v.retain(|m| !m.starts_with("model.c is required"));
    }
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

/// Result class of a finished run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    InvariantFailure,
    Infeasible,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::InvariantFailure => 1,
            Outcome::Infeasible => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub experiment: Experiment,
    pub outcome: Outcome,
    pub summary: serde_json::Value,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize)]
struct InvariantTally {
    checks: usize,
    failures: usize,
    reports: Vec<InvariantReport>,
    extra: Vec<serde_json::Value>,
}

impl InvariantTally {
    fn add_report(&mut self, r: &InvariantReport) {
        self.checks += r.delay_checks + r.speed_checks;
        self.failures += r.failures();
        self.reports.push(r.clone());
    }

    fn add_check(&mut self, name: &str, passed: bool, detail: serde_json::Value) {
        self.checks += 1;
        if !passed {
            self.failures += 1;
        }
        self.extra
            .push(json!({ "name": name, "passed": passed, "detail": detail }));
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(name);
        let f = File::create(&p)?;
        self.files.push(p);
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt17(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_else(|| "nan".into())
}

/// Diameters, velocity-Lipschitz constant and a bound on `D(0)` for speeds
/// `>= c_lo` of the initial data.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct InitialSummary {
    pub dx0: f64,
    pub dv0: f64,
    pub l_v0: f64,
    pub constant_velocity: bool,
}

pub fn summarize_initial(data: &InitialData, s: f64) -> Result<InitialSummary> {
    let (x, v) = data.state_at_zero()?;
    let d = data.dim();
    let mut l_v0 = 0.0f64;
    for p in &data.paths {
        l_v0 = l_v0.max(TrajectoryHistory::new(p.clone(), s.max(f64::MIN_POSITIVE))?.initial_velocity_lipschitz());
    }
    Ok(InitialSummary {
        dx0: diameter(&x, d),
        dv0: diameter(&v, d),
        l_v0,
        constant_velocity: l_v0 == 0.0,
    })
}

fn certify_data(cfg: &RunConfig, data: &InitialData) -> Result<(Certification, InitialSummary, f64)> {
    let kernel = InfluenceFunction::from_spec(&cfg.model.kernel)?;
    let s = cfg.model.s;
    let init = summarize_initial(data, s)?;
    if init.constant_velocity {
        let eta = match cfg.certify.eta {
            Some(e) => Some(e),
            None => find_eta(&kernel, init.dx0, init.dv0)?.eta,
        };
        let cert = match eta {
            Some(eta) => critical_speed_constant_data(&kernel, init.dx0, init.dv0, s, eta, &cfg.certify.menu)?,
            None => Certification::Infeasible {
                reason: "no decay rate eta satisfies Psi(dX0 + dV0/eta) > eta".into(),
                best_margin: f64::NEG_INFINITY,
                scan: Vec::new(),
            },
        };
        Ok((cert, init, s))
    } else {
        let c_lo = cfg.model.c.ok_or_else(|| {
            Error::Config(vec![
                "model.c is required to bound D(0) for initial data with nonconstant velocity".into(),
            ])
        })?;
        let d0 = init.l_v0 * init.dx0 / (c_lo - s);
        let cert = feasibility_nonconstant(&kernel, init.dx0, init.dv0, s, init.l_v0, d0, &cfg.certify.grid)?;
        Ok((cert, init, c_lo))
    }
}

fn certification_json(cert: &Certification) -> serde_json::Value {
    serde_json::to_value(cert).unwrap_or(serde_json::Value::Null)
}

/// Runs one experiment and writes its artifacts under `out_dir`.
pub fn run(cfg: &RunConfig, experiment: Experiment, out_dir: &Path) -> Result<RunReport> {
    cfg.validate(experiment)?;
    let start = Instant::now();
    let mut w = Writer::new(out_dir)?;
    let mut tally = InvariantTally::default();
    let mut outcome = Outcome::Ok;
    let result = match experiment {
        Experiment::Simulate => run_simulate(cfg, &mut w, &mut tally)?,
        Experiment::Certify => run_certify(cfg, &mut w, &mut tally, &mut outcome)?,
        Experiment::FlockRun => run_flock(cfg, &mut w, &mut tally, &mut outcome)?,
        Experiment::Meanfield => run_meanfield(cfg, &mut w, &mut tally)?,
        Experiment::Sweep => run_sweep(cfg, &mut w, &mut tally)?,
    };
    if tally.failures > 0 {
        outcome = Outcome::InvariantFailure;
    }
    let summary = json!({
        "experiment": experiment.name(),
        "status": outcome,
        "exit_code": outcome.exit_code(),
        "config": cfg,
        "invariants": tally,
        "result": result,
    });
    w.json("summary.json", &summary)?;
    w.json("timing.json", &json!({ "wall_seconds": start.elapsed().as_secs_f64() }))?;
    Ok(RunReport {
        experiment,
        outcome,
        summary,
        files: w.files,
    })
}

fn run_simulate(cfg: &RunConfig, w: &mut Writer, tally: &mut InvariantTally) -> Result<serde_json::Value> {
    let sim = cfg.sim_config(cfg.model.c.unwrap_or(f64::NAN))?;
    let data = cfg.initial_data()?;
    let out = simulate(&sim, &data)?;
    tally.add_report(&out.invariants);
    out.series.write_csv(w.create("diagnostics.csv")?)?;
    if cfg.output.trajectories {
        write_trajectory_csv(w.create("trajectories.csv")?, &out.histories)?;
    }
    Ok(json!({
        "agents": data.n(),
        "samples": out.series.len(),
        "first": out.series.first(),
        "last": out.series.last(),
    }))
}

fn run_certify(
    cfg: &RunConfig,
    w: &mut Writer,
    tally: &mut InvariantTally,
    outcome: &mut Outcome,
) -> Result<serde_json::Value> {
    let data = cfg.initial_data()?;
    if let Some(betas) = &cfg.certify.sweep_betas {
        let init = summarize_initial(&data, cfg.model.s)?;
        let rows = beta_sweep(betas, init.dx0, init.dv0, cfg.model.s, &cfg.certify.menu)?;
        let csv: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![fmt17(r.beta), r.feasible.to_string(), opt17(r.c_star)])
            .collect();
        w.csv("sweep.csv", "beta,feasible,c_star", &csv)?;
        return Ok(json!({ "initial": init, "sweep": rows }));
    }
    let kernel = InfluenceFunction::from_spec(&cfg.model.kernel)?;
    let (cert, init, c_lo) = certify_data(cfg, &data)?;
    if let Some(c) = cert.certificate() {
        let ok = c.validate(&kernel).is_ok();
        tally.add_check("certificate_conditions", ok, json!(c.conditions_at(&kernel, c.c_star)));
    } else {
        *outcome = Outcome::Infeasible;
    }
    let value = certification_json(&cert);
    w.json("certificate.json", &value)?;
    Ok(json!({ "initial": init, "speed_floor": c_lo, "certification": value }))
}

fn run_flock(
    cfg: &RunConfig,
    w: &mut Writer,
    tally: &mut InvariantTally,
    outcome: &mut Outcome,
) -> Result<serde_json::Value> {
    let data = cfg.initial_data()?;
    let kernel = InfluenceFunction::from_spec(&cfg.model.kernel)?;
    let (cert, init, c_lo) = certify_data(cfg, &data)?;
    let value = certification_json(&cert);
    w.json("certificate.json", &value)?;
    let Some(c) = cert.certificate() else {
        *outcome = Outcome::Infeasible;
        return Ok(json!({ "initial": init, "certification": value }));
    };
    tally.add_check(
        "certificate_conditions",
        c.validate(&kernel).is_ok(),
        json!(c.conditions_at(&kernel, c.c_star)),
    );
    let speed = c.c_star.max(c_lo) * cfg.certify.speed_factor;
    let mut sim = cfg.sim_config(speed)?;
    sim.horizon = cfg.certify.horizon.unwrap_or_else(|| c.suggested_horizon());
    let out = simulate(&sim, &data)?;
    tally.add_report(&out.invariants);
    let decay = check_decay(&out.series, c.eta, c.sigma, c.kappa, cfg.certify.slack)?;
    tally.add_check("decay", decay.holds, json!(decay));
    out.series.write_csv(w.create("diagnostics.csv")?)?;
    if cfg.output.trajectories {
        write_trajectory_csv(w.create("trajectories.csv")?, &out.histories)?;
    }
    Ok(json!({
        "initial": init,
        "speed": speed,
        "horizon": sim.horizon,
        "certification": value,
        "decay": decay,
        "samples": out.series.len(),
        "last": out.series.last(),
    }))
}

fn run_meanfield(cfg: &RunConfig, w: &mut Writer, tally: &mut InvariantTally) -> Result<serde_json::Value> {
    let law = cfg
        .law()
        .ok_or_else(|| Error::Config(vec!["meanfield needs [initial.law]".into()]))?;
    let sim = cfg.sim_config(cfg.model.c.unwrap_or(f64::NAN))?;
    let mf = &cfg.meanfield;
    let study = particle_convergence_study(&law, &mf.n_list, &sim, mf.meanfield_rescale)?;
    study.reports.iter().for_each(|r| tally.add_report(r));
    let csv: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.n_next.to_string(),
                fmt17(r.w0),
                fmt17(r.wt),
                opt17(r.ratio),
            ]
        })
        .collect();
    w.csv("meanfield.csv", "N,N_next,W0_pair,WT_pair,ratio", &csv)?;
    let nonincreasing = study.rows.windows(2).all(|p| p[1].wt <= p[0].wt);
    let mut result = json!({
        "rows": study.rows,
        "wt_nonincreasing": nonincreasing,
    });
    if !mf.deltas.is_empty() {
        let pert = perturbation_study(&law, mf.perturbation_n, &mf.deltas, &sim, mf.meanfield_rescale)?;
        pert.reports.iter().for_each(|r| tally.add_report(r));
        let csv: Vec<Vec<String>> = pert
            .rows
            .iter()
            .map(|r| vec![fmt17(r.delta), fmt17(r.w0), fmt17(r.wt), opt17(r.ratio)])
            .collect();
        w.csv("perturbation.csv", "delta,W0,WT,ratio", &csv)?;
        let ratios: Vec<f64> = pert.rows.iter().filter_map(|r| r.ratio).collect();
        let band = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            / ratios.iter().copied().fold(f64::INFINITY, f64::min);
        result["perturbation"] = json!({ "rows": pert.rows, "ratio_band": band });
    }
    Ok(result)
}

fn run_sweep(cfg: &RunConfig, w: &mut Writer, tally: &mut InvariantTally) -> Result<serde_json::Value> {
    let sim = cfg.sim_config(cfg.sweep.speeds[0])?;
    let data = cfg.initial_data()?;
    let sweep = consistency_sweep(&sim, &data, &cfg.sweep.speeds)?;
    sweep.reports.iter().for_each(|r| tally.add_report(r));
    let csv: Vec<Vec<String>> = sweep
        .rows
        .iter()
        .map(|r| vec![fmt17(r.c), fmt17(r.pos_sup), fmt17(r.vel_sup), fmt17(r.distance)])
        .collect();
    w.csv("consistency.csv", "c,pos_sup,vel_sup,distance", &csv)?;
    Ok(json!({
        "rows": sweep.rows,
        "strictly_decreasing": sweep.strictly_decreasing(),
    }))
}

/// Sizes the global worker pool from `FLOCKDELAY_THREADS`, else `threads`.
pub fn init_threads(threads: Option<usize>) -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| Error::Config(vec![format!("{THREADS_ENV} must be an integer >= 1 (got {v:?})")]))?,
        ),
        Err(_) => threads,
    };
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[derive(Parser, Debug)]
#[command(
    name = "flockdelay",
    version,
    about = "Cucker-Smale flocking with finite-speed information propagation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the delayed system and write diagnostics.
    Simulate(CommonArgs),
    /// Compute a critical propagation speed.
    Certify {
        #[command(flatten)]
        common: CommonArgs,
        /// Kernel-exponent sweep, `beta=0.1,0.25,0.4`.
        #[arg(long, value_name = "beta=B1,B2,...")]
        sweep: Option<String>,
    },
    /// Certify, simulate at the certified speed and check the decay bounds.
    FlockRun(CommonArgs),
    /// Particle-convergence study on nested ensembles.
    Meanfield {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
    /// Distance to the undelayed solution along a list of speeds.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        speeds: Option<Vec<f64>>,
    },
}

/// Parses `beta=0.1,0.25`.
pub fn parse_beta_sweep(arg: &str) -> Result<Vec<f64>> {
    let list = arg
        .strip_prefix("beta=")
        .ok_or_else(|| Error::Usage(format!("--sweep expects beta=B1,B2,..., got {arg:?}")))?;
    list.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("--sweep: {t:?} is not a number")))
        })
        .collect()
}

fn prepare(cli: Cli) -> Result<(RunConfig, Experiment, PathBuf)> {
    let (common, exp) = match &cli.command {
        Command::Simulate(c) => (c, Experiment::Simulate),
        Command::Certify { common, .. } => (common, Experiment::Certify),
        Command::FlockRun(c) => (c, Experiment::FlockRun),
        Command::Meanfield { common, .. } => (common, Experiment::Meanfield),
        Command::Sweep { common, .. } => (common, Experiment::Sweep),
    };
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(vec![format!("{}: {e}", common.config.display())]))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(v) => Error::Config(
            v.into_iter()
                .map(|m| format!("{}: {m}", common.config.display()))
                .collect(),
        ),
        other => other,
    })?;
    cfg.experiment = Some(exp);
    match &cli.command {
        Command::Certify { sweep: Some(s), .. } => cfg.certify.sweep_betas = Some(parse_beta_sweep(s)?),
        Command::Meanfield { n_list: Some(n), .. } => cfg.meanfield.n_list = n.clone(),
        Command::Sweep { speeds: Some(s), .. } => cfg.sweep.speeds = s.clone(),
        _ => {}
    }
    let dir = common.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    cfg.validate(exp)?;
    Ok((cfg, exp, dir))
}

/// Entry point of the command-line tool; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    let outcome = prepare(cli).and_then(|(cfg, exp, dir)| {
        init_threads(cfg.threads)?;
        let report = run(&cfg, exp, &dir)?;
        eprintln!("{}: {:?}, outputs in {}", exp.name(), report.outcome, dir.display());
        Ok(report.outcome)
    });
    match outcome {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
c = 5.0
s = 1.0
kernel = { type = "powerlaw", beta = 0.5 }

[initial]
agents = [
    { kind = "constant_velocity", x0 = [-1.0], v0 = [0.1] },
    { kind = "constant_velocity", x0 = [1.0], v0 = [-0.1] },
]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.model.dt, 0.01);
        assert_eq!(cfg.model.horizon, 10.0);
        assert_eq!(cfg.model.sample_every, 1);
        assert_eq!(cfg.model.scheme, Scheme::Rk4Predicted);
        assert!(cfg.model.align_breaks);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.certify.slack, 1e-9);
        assert_eq!(cfg.meanfield.n_list, vec![4, 8, 16, 32]);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        assert!(cfg.violations(Experiment::Simulate).is_empty());
    }

    #[test]
    fn c_equal_to_s_is_rejected() {
        let cfg = RunConfig::parse(&MINIMAL.replace("c = 5.0", "c = 1.0")).unwrap();
        let v = cfg.violations(Experiment::Simulate);
        assert!(
            v.iter().any(|m| m.contains("agents must travel slower than c")),
            "{v:?}"
        );
    }

    #[test]
    fn speed_equal_to_s_is_accepted() {
        let cfg = RunConfig::parse(&MINIMAL.replace("v0 = [0.1]", "v0 = [1.0]")).unwrap();
        assert!(cfg.violations(Experiment::Simulate).is_empty());
        let cfg = RunConfig::parse(&MINIMAL.replace("v0 = [0.1]", "v0 = [1.0000001]")).unwrap();
        assert_eq!(cfg.violations(Experiment::Simulate).len(), 1);
    }

    #[test]
    fn all_violations_are_reported() {
        let text = MINIMAL
            .replace("c = 5.0", "c = 0.5")
            .replace("s = 1.0", "s = 1.0\ndt = -1.0")
            .replace("v0 = [0.1]", "v0 = [2.0]");
        let v = RunConfig::parse(&text).unwrap().violations(Experiment::Simulate);
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let text = "[model]\nc = 5.0\ns = = 1.0\n";
        let Err(Error::Config(v)) = RunConfig::parse(text) else {
            panic!()
        };
        assert!(v[0].contains("line 3, column"), "{v:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("s = 1.0", "s = 1.0\nspeed = 3.0");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn missing_sections_are_named() {
        let text = "[model]\ns = 1.0\nkernel = { type = \"constant\", level = 1.0 }\n";
        let cfg = RunConfig::parse(text).unwrap();
        let v = cfg.violations(Experiment::Simulate);
        assert!(v.iter().any(|m| m.contains("model.c is required")));
        assert!(v.iter().any(|m| m.contains("agents")));
        let v = cfg.violations(Experiment::Meanfield);
        assert!(v.iter().any(|m| m.contains("[initial.law]")));
    }

    #[test]
    fn beta_sweep_argument() {
        assert_eq!(parse_beta_sweep("beta=0.1,0.25").unwrap(), vec![0.1, 0.25]);
        assert!(parse_beta_sweep("gamma=1").is_err());
        assert!(parse_beta_sweep("beta=0.1,x").is_err());
    }

    #[test]
    fn law_takes_seed_and_speed_from_the_run() {
        let text = r#"
seed = 42
[model]
c = 5.0
s = 0.5
kernel = { type = "powerlaw", beta = 0.5 }
[initial]
n = 3
[initial.law]
position = { kind = "uniform_box", lo = [0.0], hi = [1.0] }
velocity = { kind = "uniform_ball", center = [0.0], radius = 1.0 }
"#;
        let cfg = RunConfig::parse(text).unwrap();
        let law = cfg.law().unwrap();
        assert_eq!((law.seed, law.s), (42, 0.5));
        assert_eq!(cfg.initial_data().unwrap().n(), 3);
        assert!(cfg.violations(Experiment::Simulate).is_empty());
    }

    #[test]
    fn initial_summary_of_constant_data() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let s = summarize_initial(&cfg.initial_data().unwrap(), 1.0).unwrap();
        assert_eq!((s.dx0, s.dv0, s.l_v0), (2.0, 0.2, 0.0));
        assert!(s.constant_velocity);
    }
}
