//! Experiment configuration files.
//!
//! Configs are flat JSON objects. Every dimensioned quantity carries its unit
//! in the key: frequencies `_GHz` (ω/2π), couplings and Rabi rates `_MHz`
//! (g/2π, Ω/2π), gate times `_ns`, coherence times `_us`. The same quantity
//! may instead be given in SI as `_rad_s` or `_s`; the normalized echo uses
//! that form, so parsing an echo reproduces the normalized values exactly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use qudit_core::model::presets;
use qudit_core::open_system::DecoherenceParams;
use qudit_core::sequence::GateConfig;
use qudit_core::spectrum::SweepParameter;
use qudit_core::units::{ghz, mhz, ns, us};
use qudit_core::{SystemParams, TwoSystemParams};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Spectrum,
    Stark,
    Gate,
    TwoQudit,
    Trajectories,
    Synthesize,
    Readout,
}

impl Kind {
    pub const ALL: [Kind; 7] =
        [Kind::Spectrum, Kind::Stark, Kind::Gate, Kind::TwoQudit, Kind::Trajectories, Kind::Synthesize, Kind::Readout];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Spectrum => "spectrum",
            Kind::Stark => "stark",
            Kind::Gate => "gate",
            Kind::TwoQudit => "two-qudit",
            Kind::Trajectories => "trajectories",
            Kind::Synthesize => "synthesize",
            Kind::Readout => "readout",
        }
    }

    fn parse(s: &str) -> CliResult<Kind> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unit {
    GHz,
    MHz,
    Ns,
    Us,
}

impl Unit {
    fn suffix(self) -> &'static str {
        match self {
            Unit::GHz => "GHz",
            Unit::MHz => "MHz",
            Unit::Ns => "ns",
            Unit::Us => "us",
        }
    }

    fn si_suffix(self) -> &'static str {
        match self {
            Unit::GHz | Unit::MHz => "rad_s",
            Unit::Ns | Unit::Us => "s",
        }
    }

    fn to_si(self, x: f64) -> f64 {
        match self {
            Unit::GHz => ghz(x),
            Unit::MHz => mhz(x),
            Unit::Ns => ns(x),
            Unit::Us => us(x),
        }
    }
}

/// Grid over one system parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: SweepParameter,
    /// Endpoints (rad/s).
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    pub fn grid(&self) -> Vec<f64> {
        let m = (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + (self.stop - self.start) * i as f64 / m).collect()
    }
}

/// Pulse settings shared by gate experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulses {
    /// Number-selective 0↔1 Rabi rate (rad/s).
    pub omega1: f64,
    /// 1↔2 Rabi rate (rad/s).
    pub omega2: f64,
    /// Flux ramp time (s).
    pub flux_rise: f64,
}

impl Pulses {
    pub fn gate_config(&self) -> GateConfig {
        GateConfig { omega1: self.omega1, omega2: self.omega2, flux_rise: self.flux_rise, ..GateConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryModel {
    /// Single-qudit full swap `|0,n⟩ → |0,n+1⟩`.
    Swap,
    /// Two-qudit phase gate on `|n,n⟩`.
    Phase,
}

impl TrajectoryModel {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryModel::Swap => "swap",
            TrajectoryModel::Phase => "phase",
        }
    }
}

/// Experiment-specific settings, all in SI units.
#[derive(Debug, Clone, PartialEq)]
pub enum Settings {
    Spectrum {
        sweep: Sweep,
        levels: usize,
    },
    Stark {
        sweep: Sweep,
        fock_max: usize,
    },
    Gate {
        j: usize,
        span: usize,
        /// Rotation angle; the realized gate is `U_{j,j+span}(θ/2, φ)`.
        theta: f64,
        phi: f64,
        initial_fock: usize,
        probe_fock_max: usize,
        pulses: Pulses,
        sample_interval: f64,
        waveform_step: f64,
    },
    TwoQudit {
        j: usize,
        k: usize,
        theta: f64,
        pulses: Pulses,
        waveform_step: f64,
    },
    Trajectories {
        model: TrajectoryModel,
        /// Paired coherence settings `(T_q[i], T_r[i])` (s).
        t_q: Vec<f64>,
        t_r: Vec<f64>,
        fock_max: usize,
        trajectories: usize,
    },
    Synthesize {
        dimension: usize,
        /// Target as rows of `[re, im]`; Haar-random from the seed when absent.
        unitary: Option<Vec<Vec<[f64; 2]>>>,
        lower: bool,
        pulses: Pulses,
    },
    Readout {
        /// Fock populations; random from the seed when absent.
        populations: Option<Vec<f64>>,
        components: usize,
        duration: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    /// The experiment uses its own fixed interaction model.
    None,
    Single(SystemParams),
    Pair(TwoSystemParams),
}

/// A parsed, unit-normalized experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub system: System,
    pub settings: Settings,
}

/// Key-tracking reader over a flat JSON object.
struct Reader {
    map: Map<String, Value>,
    used: BTreeSet<String>,
}

impl Reader {
    fn get(&mut self, key: &str) -> Option<Value> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn number(&mut self, key: &str) -> CliResult<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(CliError::config(format!("{key} must be a finite number"))),
            },
        }
    }

    fn integer(&mut self, key: &str) -> CliResult<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                v.as_u64().map(Some).ok_or_else(|| CliError::config(format!("{key} must be a non-negative integer")))
            }
        }
    }

    fn count(&mut self, key: &str, default: usize) -> CliResult<usize> {
        Ok(self.integer(key)?.map_or(default, |x| x as usize))
    }

    fn boolean(&mut self, key: &str) -> CliResult<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| CliError::config(format!("{key} must be true or false"))),
        }
    }

    fn string(&mut self, key: &str) -> CliResult<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(CliError::config(format!("{key} must be a string"))),
        }
    }

    /// A scalar given as `name_<unit>` or `name_<si>`, converted to SI.
    fn quantity(&mut self, name: &str, unit: Unit) -> CliResult<Option<f64>> {
        let scaled = self.number(&format!("{name}_{}", unit.suffix()))?.map(|x| unit.to_si(x));
        let si = self.number(&format!("{name}_{}", unit.si_suffix()))?;
        match (scaled, si) {
            (Some(_), Some(_)) => Err(CliError::config(format!(
                "{name} given both as {name}_{} and {name}_{}",
                unit.suffix(),
                unit.si_suffix()
            ))),
            (x, None) | (None, x) => Ok(x),
        }
    }

    /// A scalar or array quantity, converted to SI.
    fn quantities(&mut self, name: &str, unit: Unit) -> CliResult<Option<Vec<f64>>> {
        let mut read = |key: String, scale: &dyn Fn(f64) -> f64| -> CliResult<Option<Vec<f64>>> {
            let Some(v) = self.get(&key) else { return Ok(None) };
            let items = match v {
                Value::Array(a) => a,
                x => vec![x],
            };
            items
                .iter()
                .map(|x| match x.as_f64() {
                    Some(x) if x.is_finite() => Ok(scale(x)),
                    _ => Err(CliError::config(format!("{key} must hold finite numbers"))),
                })
                .collect::<CliResult<Vec<f64>>>()
                .map(Some)
        };
        let scaled = read(format!("{name}_{}", unit.suffix()), &|x| unit.to_si(x))?;
        let si = read(format!("{name}_{}", unit.si_suffix()), &|x| x)?;
        match (scaled, si) {
            (Some(_), Some(_)) => Err(CliError::config(format!("{name} given in two units"))),
            (x, None) | (None, x) => Ok(x),
        }
    }

    fn finish(self) -> CliResult<()> {
        let unknown: Vec<&String> = self.map.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(format!("unknown keys: {unknown:?}")))
        }
    }
}

/// Normalized echo builder.
#[derive(Default)]
struct Echo(Map<String, Value>);

impl Echo {
    fn put(&mut self, key: &str, v: impl Serialize) {
        self.0.insert(key.to_string(), serde_json::to_value(v).expect("echo value serializes"));
    }

    fn quantity(&mut self, name: &str, unit: Unit, x: f64) {
        self.put(&format!("{name}_{}", unit.si_suffix()), x);
    }
}

fn sweep_unit(p: SweepParameter) -> Unit {
    match p {
        SweepParameter::Omega01 | SweepParameter::OmegaR => Unit::GHz,
        SweepParameter::G => Unit::MHz,
    }
}

fn read_sweep(r: &mut Reader, default: SweepParameter) -> CliResult<Sweep> {
    let parameter = match r.string("sweep")?.as_deref() {
        None => default,
        Some("omega01") => SweepParameter::Omega01,
        Some("omega_r") => SweepParameter::OmegaR,
        Some("g") => SweepParameter::G,
        Some(s) => return Err(CliError::config(format!("sweep must be omega01, omega_r or g, got {s:?}"))),
    };
    let unit = sweep_unit(parameter);
    let start = r.quantity("sweep_start", unit)?.ok_or_else(|| CliError::config("sweep_start is required"))?;
    let stop = r.quantity("sweep_stop", unit)?.ok_or_else(|| CliError::config("sweep_stop is required"))?;
    let points = r.count("sweep_points", 201)?;
    Ok(Sweep { parameter, start, stop, points })
}

fn echo_sweep(e: &mut Echo, s: &Sweep) {
    e.put("sweep", s.parameter.name());
    let unit = sweep_unit(s.parameter);
    e.quantity("sweep_start", unit, s.start);
    e.quantity("sweep_stop", unit, s.stop);
    e.put("sweep_points", s.points);
}

fn read_pulses(r: &mut Reader) -> CliResult<Pulses> {
    let d = GateConfig::default();
    Ok(Pulses {
        omega1: r.quantity("omega1", Unit::MHz)?.unwrap_or(d.omega1),
        omega2: r.quantity("omega2", Unit::MHz)?.unwrap_or(d.omega2),
        flux_rise: r.quantity("flux_rise", Unit::Ns)?.unwrap_or(d.flux_rise),
    })
}

fn echo_pulses(e: &mut Echo, p: &Pulses) {
    e.quantity("omega1", Unit::MHz, p.omega1);
    e.quantity("omega2", Unit::MHz, p.omega2);
    e.quantity("flux_rise", Unit::Ns, p.flux_rise);
}

fn read_pair(r: &mut Reader, base: SystemParams, prefix: &str) -> CliResult<SystemParams> {
    let key = |k: &str| format!("{prefix}{k}");
    let mut p = base;
    if let Some(x) = r.quantity(&key("omega01"), Unit::GHz)? {
        p.omega01 = x;
    }
    if let Some(x) = r.quantity(&key("omega12"), Unit::GHz)? {
        p.omega12 = x;
    }
    if let Some(x) = r.quantity(&key("omega23"), Unit::GHz)? {
        p.omega23 = Some(x);
    }
    if let Some(x) = r.quantity(&key("omega_r"), Unit::GHz)? {
        p.omega_r = x;
    }
    if let Some(x) = r.quantity(&key("g"), Unit::MHz)? {
        p.g = x;
    }
    Ok(p)
}

fn echo_pair(e: &mut Echo, p: &SystemParams, prefix: &str) {
    let key = |k: &str| format!("{prefix}{k}");
    e.quantity(&key("omega01"), Unit::GHz, p.omega01);
    e.quantity(&key("omega12"), Unit::GHz, p.omega12);
    if let Some(w) = p.omega23 {
        e.quantity(&key("omega23"), Unit::GHz, w);
    }
    e.quantity(&key("omega_r"), Unit::GHz, p.omega_r);
    e.quantity(&key("g"), Unit::MHz, p.g);
}

fn read_shared(r: &mut Reader, p: &mut SystemParams) -> CliResult<()> {
    if let Some(x) = r.number("lambda")? {
        p.lambda = x;
    }
    if let Some(x) = r.number("lambda23")? {
        p.lambda23 = Some(x);
    }
    p.atom_levels = r.count("atom_levels", p.atom_levels)?;
    p.resonator_levels = r.count("resonator_levels", p.resonator_levels)?;
    Ok(())
}

fn echo_shared(e: &mut Echo, p: &SystemParams) {
    e.put("lambda", p.lambda);
    if let Some(l) = p.lambda23 {
        e.put("lambda23", l);
    }
    e.put("atom_levels", p.atom_levels);
    e.put("resonator_levels", p.resonator_levels);
}

fn read_system(r: &mut Reader, kind: Kind) -> CliResult<System> {
    match kind {
        Kind::Trajectories => Ok(System::None),
        Kind::TwoQudit => {
            let base = presets::two_qudit_reference(4);
            let mut a = read_pair(r, base.a, "")?;
            read_shared(r, &mut a)?;
            let b_base = SystemParams {
                lambda: a.lambda,
                lambda23: a.lambda23,
                atom_levels: a.atom_levels,
                resonator_levels: a.resonator_levels,
                ..base.b
            };
            let b = read_pair(r, b_base, "b_")?;
            let g_ab = r.quantity("g_ab", Unit::MHz)?.unwrap_or(base.g_ab);
            Ok(System::Pair(TwoSystemParams { a, b, g_ab }))
        }
        _ => {
            let base = match kind {
                Kind::Spectrum | Kind::Stark => presets::stark_reference(ghz(7.0)),
                _ => presets::gate_reference(),
            };
            let mut p = read_pair(r, base, "")?;
            read_shared(r, &mut p)?;
            Ok(System::Single(p))
        }
    }
}

fn read_settings(r: &mut Reader, kind: Kind) -> CliResult<Settings> {
    Ok(match kind {
        Kind::Spectrum => {
            Settings::Spectrum { sweep: read_sweep(r, SweepParameter::Omega01)?, levels: r.count("levels", 6)? }
        }
        Kind::Stark => {
            Settings::Stark { sweep: read_sweep(r, SweepParameter::OmegaR)?, fock_max: r.count("fock_max", 5)? }
        }
        Kind::Gate => {
            let j = r.count("j", 0)?;
            Settings::Gate {
                j,
                span: r.count("span", 1)?,
                theta: r.number("theta_rad")?.unwrap_or(std::f64::consts::PI),
                phi: r.number("phi_rad")?.unwrap_or(0.0),
                initial_fock: r.count("initial_fock", j)?,
                probe_fock_max: r.count("probe_fock_max", 5)?,
                pulses: read_pulses(r)?,
                sample_interval: r.quantity("sample_interval", Unit::Ns)?.unwrap_or(ns(0.5)),
                waveform_step: r.quantity("waveform_step", Unit::Ns)?.unwrap_or(ns(0.05)),
            }
        }
        Kind::TwoQudit => Settings::TwoQudit {
            j: r.count("j", 1)?,
            k: r.count("k", 1)?,
            theta: r.number("theta_rad")?.unwrap_or(std::f64::consts::PI),
            pulses: read_pulses(r)?,
            waveform_step: r.quantity("waveform_step", Unit::Ns)?.unwrap_or(ns(0.05)),
        },
        Kind::Trajectories => {
            let model = match r.string("model")?.as_deref() {
                None | Some("swap") => TrajectoryModel::Swap,
                Some("phase") => TrajectoryModel::Phase,
                Some(s) => return Err(CliError::config(format!("model must be swap or phase, got {s:?}"))),
            };
            Settings::Trajectories {
                model,
                t_q: r.quantities("t_q", Unit::Us)?.unwrap_or_else(|| vec![us(10.0), us(1.0)]),
                t_r: r.quantities("t_r", Unit::Us)?.unwrap_or_else(|| vec![us(50.0), us(10.0)]),
                fock_max: r.count("fock_max", 7)?,
                trajectories: r.count("trajectories", 1024)?,
            }
        }
        Kind::Synthesize => {
            let unitary = match r.get("unitary") {
                None => None,
                Some(v) => Some(
                    serde_json::from_value::<Vec<Vec<[f64; 2]>>>(v)
                        .map_err(|e| CliError::config(format!("unitary must be rows of [re, im] pairs: {e}")))?,
                ),
            };
            let dimension = match (r.integer("dimension")?, &unitary) {
                (Some(d), _) => d as usize,
                (None, Some(u)) => u.len(),
                (None, None) => return Err(CliError::config("synthesize needs a dimension or a unitary")),
            };
            Settings::Synthesize {
                dimension,
                unitary,
                lower: r.boolean("lower")?.unwrap_or(false),
                pulses: read_pulses(r)?,
            }
        }
        Kind::Readout => {
            let populations = match r.get("populations") {
                None => None,
                Some(v) => Some(
                    serde_json::from_value::<Vec<f64>>(v)
                        .map_err(|e| CliError::config(format!("populations must be a list of numbers: {e}")))?,
                ),
            };
            let components = r.count("components", populations.as_ref().map_or(6, Vec::len))?;
            Settings::Readout {
                populations,
                components,
                duration: r.quantity("duration", Unit::Ns)?.unwrap_or(us(0.5)),
                samples: r.count("samples", 2001)?,
            }
        }
    })
}

impl Config {
    /// Parse a config object. `expected` is the subcommand it is run under;
    /// the `experiment` key may be omitted then.
    pub fn from_value(v: Value, expected: Option<Kind>) -> CliResult<Config> {
        let Value::Object(map) = v else {
            return Err(CliError::config("config must be a JSON object"));
        };
        let mut r = Reader { map, used: BTreeSet::new() };
        let kind = match (r.string("experiment")?, expected) {
            (Some(s), None) => Kind::parse(&s)?,
            (Some(s), Some(k)) => {
                let named = Kind::parse(&s)?;
                if named != k {
                    return Err(CliError::config(format!("config is a {s} experiment, not {}", k.name())));
                }
                k
            }
            (None, Some(k)) => k,
            (None, None) => return Err(CliError::config("config needs an experiment key")),
        };
        let seed = r.integer("seed")?;
        let out_dir = r.string("out_dir")?.map(PathBuf::from);
        let system = read_system(&mut r, kind)?;
        let settings = read_settings(&mut r, kind)?;
        r.finish()?;
        let cfg = Config { kind, seed, out_dir, system, settings };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_str(s: &str, expected: Option<Kind>) -> CliResult<Config> {
        let v: Value = serde_json::from_str(s).map_err(|e| CliError::config(format!("invalid JSON: {e}")))?;
        Self::from_value(v, expected)
    }

    pub fn load(path: &Path, expected: Option<Kind>) -> CliResult<(Config, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::config("config is not UTF-8"))?;
        Ok((Self::from_str(text, expected)?, bytes))
    }

    /// Input-level checks that need no simulation.
    fn check(&self) -> CliResult<()> {
        match &self.system {
            System::None => {}
            System::Single(p) => p.validate()?,
            System::Pair(p) => p.validate()?,
        }
        let bad = |msg: String| Err(CliError::Config(msg));
        match &self.settings {
            Settings::Spectrum { sweep, .. } | Settings::Stark { sweep, .. } => {
                if sweep.points < 2 {
                    return bad("sweep_points must be at least 2".into());
                }
                if !(sweep.stop > sweep.start) || !(sweep.start > 0.0) {
                    return bad("sweep needs 0 < sweep_start < sweep_stop".into());
                }
            }
            Settings::Gate { span, sample_interval, waveform_step, .. } => {
                if !(1..=3).contains(span) {
                    return bad(format!("span must be 1, 2 or 3, got {span}"));
                }
                if !(*sample_interval > 0.0) || !(*waveform_step > 0.0) {
                    return bad("sample_interval and waveform_step must be positive".into());
                }
            }
            Settings::TwoQudit { waveform_step, .. } => {
                if !(*waveform_step > 0.0) {
                    return bad("waveform_step must be positive".into());
                }
            }
            Settings::Trajectories { t_q, t_r, trajectories, .. } => {
                if t_q.is_empty() || t_q.len() != t_r.len() {
                    return bad("t_q and t_r must be non-empty lists of equal length".into());
                }
                for (&a, &b) in t_q.iter().zip(t_r) {
                    DecoherenceParams::new(a, b).validate()?;
                }
                if *trajectories < 2 {
                    return bad("trajectories must be at least 2".into());
                }
            }
            Settings::Synthesize { dimension, unitary, .. } => {
                if !(2..=16).contains(dimension) {
                    return bad(format!("dimension must be between 2 and 16, got {dimension}"));
                }
                if let Some(u) = unitary {
                    if u.len() != *dimension || u.iter().any(|row| row.len() != *dimension) {
                        return bad(format!("unitary must be {dimension}×{dimension}"));
                    }
                }
            }
            Settings::Readout { populations, components, duration, samples } => {
                let levels = match &self.system {
                    System::Single(p) => p.resonator_levels,
                    _ => unreachable!("readout uses a single pair"),
                };
                if *components < 2 || *components > levels {
                    return bad(format!("components must be between 2 and resonator_levels ({levels})"));
                }
                if let Some(pop) = populations {
                    if pop.len() != *components || pop.iter().any(|x| !(*x >= 0.0)) {
                        return bad("populations must be non-negative, one per component".into());
                    }
                    if (pop.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return bad("populations must sum to 1".into());
                    }
                }
                if !(*duration > 0.0) || *samples < 2 {
                    return bad("readout needs a positive duration and at least two samples".into());
                }
            }
        }
        Ok(())
    }

    /// Unit-normalized echo (rad/s, s). It is itself a valid config.
    pub fn echo(&self) -> Value {
        let mut e = Echo::default();
        e.put("experiment", self.kind.name());
        if let Some(s) = self.seed {
            e.put("seed", s);
        }
        if let Some(d) = &self.out_dir {
            e.put("out_dir", d.to_string_lossy());
        }
        match &self.system {
            System::None => {}
            System::Single(p) => {
                echo_pair(&mut e, p, "");
                echo_shared(&mut e, p);
            }
            System::Pair(tp) => {
                echo_pair(&mut e, &tp.a, "");
                echo_shared(&mut e, &tp.a);
                echo_pair(&mut e, &tp.b, "b_");
                e.quantity("g_ab", Unit::MHz, tp.g_ab);
            }
        }
        match &self.settings {
            Settings::Spectrum { sweep, levels } => {
                echo_sweep(&mut e, sweep);
                e.put("levels", levels);
            }
            Settings::Stark { sweep, fock_max } => {
                echo_sweep(&mut e, sweep);
                e.put("fock_max", fock_max);
            }
            Settings::Gate {
                j,
                span,
                theta,
                phi,
                initial_fock,
                probe_fock_max,
                pulses,
                sample_interval,
                waveform_step,
            } => {
                e.put("j", j);
                e.put("span", span);
                e.put("theta_rad", theta);
                e.put("phi_rad", phi);
                e.put("initial_fock", initial_fock);
                e.put("probe_fock_max", probe_fock_max);
                echo_pulses(&mut e, pulses);
                e.quantity("sample_interval", Unit::Ns, *sample_interval);
                e.quantity("waveform_step", Unit::Ns, *waveform_step);
            }
            Settings::TwoQudit { j, k, theta, pulses, waveform_step } => {
                e.put("j", j);
                e.put("k", k);
                e.put("theta_rad", theta);
                echo_pulses(&mut e, pulses);
                e.quantity("waveform_step", Unit::Ns, *waveform_step);
            }
            Settings::Trajectories { model, t_q, t_r, fock_max, trajectories } => {
                e.put("model", model.name());
                e.put("t_q_s", t_q);
                e.put("t_r_s", t_r);
                e.put("fock_max", fock_max);
                e.put("trajectories", trajectories);
            }
            Settings::Synthesize { dimension, unitary, lower, pulses } => {
                e.put("dimension", dimension);
                if let Some(u) = unitary {
                    e.put("unitary", u);
                }
                e.put("lower", lower);
                echo_pulses(&mut e, pulses);
            }
            Settings::Readout { populations, components, duration, samples } => {
                if let Some(p) = populations {
                    e.put("populations", p);
                }
                e.put("components", components);
                e.quantity("duration", Unit::Ns, *duration);
                e.put("samples", samples);
            }
        }
        Value::Object(e.0)
    }

    pub fn single(&self) -> CliResult<&SystemParams> {
        match &self.system {
            System::Single(p) => Ok(p),
            _ => Err(CliError::config(format!("{} needs a single atom–resonator pair", self.kind.name()))),
        }
    }

    pub fn pair(&self) -> CliResult<&TwoSystemParams> {
        match &self.system {
            System::Pair(p) => Ok(p),
            _ => Err(CliError::config(format!("{} needs two pairs", self.kind.name()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qudit_core::units::{to_ghz, to_mhz};
    use serde_json::json;

    #[test]
    fn unit_suffixes_convert_to_si() {
        let c = Config::from_value(
            json!({"experiment": "gate", "omega01_GHz": 7.28, "g_MHz": 35, "flux_rise_ns": 3}),
            None,
        )
        .unwrap();
        let p = c.single().unwrap();
        assert!((to_ghz(p.omega01) - 7.28).abs() < 1e-12);
        assert!((to_mhz(p.g) - 35.0).abs() < 1e-12);
        let Settings::Gate { pulses, .. } = c.settings else { panic!() };
        assert!((pulses.flux_rise - 3e-9).abs() < 1e-21);
    }

    #[test]
    fn echo_round_trips_exactly() {
        for v in [
            json!({"experiment": "spectrum", "sweep_start_GHz": 6.5, "sweep_stop_GHz": 7.7, "sweep_points": 11}),
            json!({"experiment": "stark", "sweep": "omega01", "sweep_start_GHz": 7.1, "sweep_stop_GHz": 7.9}),
            json!({"experiment": "gate", "j": 1, "span": 2, "omega1_MHz": 5.0, "seed": 3}),
            json!({"experiment": "two-qudit", "g_ab_MHz": 30, "b_omega01_GHz": 7.9}),
            json!({"experiment": "trajectories", "model": "phase", "t_q_us": [10, 1], "t_r_us": [50, 10]}),
            json!({"experiment": "synthesize", "dimension": 4, "lower": true}),
            json!({"experiment": "readout", "populations": [0.5, 0.5], "duration_ns": 400}),
        ] {
            let c = Config::from_value(v, None).unwrap();
            let again = Config::from_value(c.echo(), None).unwrap();
            assert_eq!(c, again);
            assert_eq!(c.echo(), again.echo());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            json!({"experiment": "gate", "omega01_GHz": 7.0, "omega01_rad_s": 1.0}),
            json!({"experiment": "gate", "typo_GHz": 7.0}),
            json!({"experiment": "trajectories", "t_q_us": [10], "t_r_us": [-5]}),
            json!({"experiment": "trajectories", "t_q_us": [10, 1], "t_r_us": [5]}),
            json!({"experiment": "spectrum", "sweep_start_GHz": 8, "sweep_stop_GHz": 7}),
            json!({"experiment": "readout", "populations": [0.5, 0.6]}),
            json!({"experiment": "warp"}),
            json!([1, 2]),
        ];
        for v in cases {
            assert!(Config::from_value(v.clone(), None).is_err(), "{v}");
        }
    }

    #[test]
    fn subcommand_must_match_experiment() {
        let v = json!({"experiment": "gate"});
        assert!(Config::from_value(v.clone(), Some(Kind::Gate)).is_ok());
        assert!(Config::from_value(v, Some(Kind::Stark)).is_err());
        assert!(Config::from_value(json!({}), Some(Kind::Gate)).is_ok());
        assert!(Config::from_value(json!({}), None).is_err());
    }

    #[test]
    fn negative_coherence_time_is_a_config_error() {
        let e = Config::from_value(json!({"experiment": "trajectories", "t_r_us": [-10, 10]}), None).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }
}
