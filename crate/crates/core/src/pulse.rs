//! Control pulses and schedules.
//!
//! A [`Schedule`] holds segments on three kinds of control line per qudit
//! (microwave drive, flux, and for two pairs the coupler), plus zero-duration
//! frame updates and a logical annotation of the gate factors.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{to_ghz, to_mhz, to_ns, TWO_PI};

/// Atom transition addressed by a microwave pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// 0 ↔ 1.
    T01,
    /// 1 ↔ 2.
    T12,
}

impl Transition {
    pub fn lower(&self) -> usize {
        match self {
            Transition::T01 => 0,
            Transition::T12 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Rectangular,
    /// Gaussian truncated at `±truncation·σ`, baseline-subtracted so it
    /// vanishes at both ends. The segment duration is `2·truncation·σ`.
    TruncatedGaussian {
        truncation: f64,
    },
}

impl Default for Shape {
    fn default() -> Self {
        Shape::TruncatedGaussian { truncation: 2.0 }
    }
}

impl Shape {
    /// Normalized envelope in `[0, 1]` at fractional position `s ∈ [0, 1]`.
    pub fn value(&self, s: f64) -> f64 {
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        match *self {
            Shape::Rectangular => 1.0,
            Shape::TruncatedGaussian { truncation } => {
                let x = (2.0 * s - 1.0) * truncation;
                let base = (-0.5 * truncation * truncation).exp();
                ((-0.5 * x * x).exp() - base) / (1.0 - base)
            }
        }
    }

    /// `∫₀¹ value(s) ds`.
    pub fn area_fraction(&self) -> f64 {
        self.integral(|v| v)
    }

    /// `∫₀¹ value(s)² ds`.
    pub fn power_fraction(&self) -> f64 {
        self.integral(|v| v * v)
    }

    /// `∫₀¹ f(value(s)) ds`, by composite Simpson quadrature.
    fn integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            Shape::Rectangular => f(1.0),
            Shape::TruncatedGaussian { .. } => {
                const N: usize = 4096;
                let h = 1.0 / N as f64;
                let mut acc = f(self.value(0.0)) + f(self.value(1.0));
                for k in 1..N {
                    acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(self.value(k as f64 * h));
                }
                acc * h / 3.0
            }
        }
    }
}

/// How a π-pulse is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
#[derive(Default)]
pub enum CalibrationMode {
    /// Peak amplitude is the given Ω; duration solved.
    FixedAmplitude,
    /// Duration is `π/Ω` (the rectangular-pulse length); peak amplitude solved.
    #[default]
    RectangularEquivalent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Microwave {
    /// Peak Rabi frequency on the target transition (rad/s).
    pub amplitude: f64,
    /// Carrier (rad/s).
    pub carrier: f64,
    pub phase: f64,
    pub transition: Transition,
    pub shape: Shape,
    /// Magnitude of the dressed transition matrix element of `σ₊ + σ₋`;
    /// the physical drive is divided by it so `amplitude` is the Rabi rate.
    pub matrix_element: f64,
    /// Nominal Ω used in calibration, kept so the pulse can be re-derived.
    pub nominal: f64,
    pub mode: CalibrationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxShift {
    /// Atom frequency reached on the plateau (rad/s).
    pub target_omega01: f64,
    /// Atom frequency at rest (rad/s).
    pub idle_omega01: f64,
    /// Linear rise and fall time (s).
    pub rise: f64,
}

impl FluxShift {
    /// Atom frequency at time `t` since the start of a segment of length `duration`.
    pub fn value(&self, t: f64, duration: f64) -> f64 {
        if t <= 0.0 || t >= duration {
            return self.idle_omega01;
        }
        let frac = if self.rise <= 0.0 { 1.0 } else { (t / self.rise).min((duration - t) / self.rise).min(1.0) };
        self.idle_omega01 + frac * (self.target_omega01 - self.idle_omega01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    Microwave(Microwave),
    FluxShift(FluxShift),
    Idle,
    /// Atom–atom coupler switched on at its configured strength.
    Coupler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    /// Qudit whose control line carries the segment.
    pub qudit: usize,
    pub start: f64,
    pub duration: f64,
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Line {
    Drive(usize),
    Flux(usize),
    Coupler,
    Idle(usize),
}

impl PulseSegment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn line(&self) -> Line {
        match self.kind {
            SegmentKind::Microwave(_) => Line::Drive(self.qudit),
            SegmentKind::FluxShift(_) => Line::Flux(self.qudit),
            SegmentKind::Coupler => Line::Coupler,
            SegmentKind::Idle => Line::Idle(self.qudit),
        }
    }

    /// Microwave envelope (rad/s) at absolute time `t`.
    pub fn envelope(&self, t: f64) -> f64 {
        match &self.kind {
            SegmentKind::Microwave(m) => m.amplitude * m.shape.value((t - self.start) / self.duration),
            _ => 0.0,
        }
    }

    /// `∫ envelope dt` over the segment.
    pub fn area(&self) -> f64 {
        match &self.kind {
            SegmentKind::Microwave(m) => m.amplitude * self.duration * m.shape.area_fraction(),
            _ => 0.0,
        }
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self { start: self.start + dt, ..self.clone() }
    }
}

/// Selectivity heuristic: spectral FWHM of a pulse of length `t` is
/// `0.44/t` (Hz); the nearest unwanted line must sit more than three widths away.
pub fn bandwidth(duration: f64) -> f64 {
    TWO_PI * 0.44 / duration
}

pub const SELECTIVITY_FACTOR: f64 = 3.0;

/// Calibrate a π-pulse on `transition` with nominal Rabi rate `omega`.
///
/// With `splitting` given, the pulse must resolve lines that far apart.
/// Carrier, phase and matrix element are left for the caller to set.
pub fn calibrate_pi_pulse(
    transition: Transition,
    omega: f64,
    splitting: Option<f64>,
    shape: Shape,
    mode: CalibrationMode,
) -> Result<PulseSegment> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Validation("pulse amplitude must be positive".into()));
    }
    let frac = shape.area_fraction();
    let (amplitude, duration) = match mode {
        CalibrationMode::FixedAmplitude => (omega, PI / (omega * frac)),
        CalibrationMode::RectangularEquivalent => {
            let t = PI / omega;
            (PI / (t * frac), t)
        }
    };
    if let Some(split) = splitting {
        let bw = bandwidth(duration);
        if !(split.abs() > SELECTIVITY_FACTOR * bw) {
            return Err(Error::Selectivity { bandwidth: bw, splitting: split.abs() });
        }
    }
    Ok(PulseSegment {
        qudit: 0,
        start: 0.0,
        duration,
        kind: SegmentKind::Microwave(Microwave {
            amplitude,
            carrier: 0.0,
            phase: 0.0,
            transition,
            shape,
            matrix_element: 1.0,
            nominal: omega,
            mode,
        }),
    })
}

impl Microwave {
    /// Re-run the calibration that produced this pulse.
    pub fn recalibrated(&self) -> Result<(Microwave, f64)> {
        let seg = calibrate_pi_pulse(self.transition, self.nominal, None, self.shape, self.mode)?;
        let SegmentKind::Microwave(m) = seg.kind else { unreachable!() };
        Ok((
            Microwave { carrier: self.carrier, phase: self.phase, matrix_element: self.matrix_element, ..m },
            seg.duration,
        ))
    }
}

/// Zero-duration phase update of dressed states: `|a⟩ → e^{iφ}|a⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameUpdate {
    pub time: f64,
    pub qudit: usize,
    /// `(dressed label of that qudit's pair, phase)`; applied to every
    /// product state carrying that label.
    pub phases: Vec<(Vec<usize>, f64)>,
}

/// Logical gate factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum StepLabel {
    R01 {
        qudit: usize,
        n: usize,
    },
    R12 {
        qudit: usize,
        n: usize,
    },
    /// Swap `|2,level⟩ ↔ |1,level+1⟩` by angle `theta` (full swap at π/2).
    Swap {
        qudit: usize,
        level: usize,
        theta: f64,
    },
    /// Controlled phase `theta` between the two atoms.
    Coupler {
        theta: f64,
    },
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = |q: &usize| if *q == 0 { String::new() } else { format!("[{}]", (b'A' + *q as u8) as char) };
        match self {
            StepLabel::R01 { qudit, n } => write!(f, "R01{}({n})", tag(qudit)),
            StepLabel::R12 { qudit, n } => write!(f, "R12{}({n})", tag(qudit)),
            StepLabel::Swap { qudit, level, theta } => write!(f, "S{}[{level}]({theta:.6})", tag(qudit)),
            StepLabel::Coupler { theta } => write!(f, "C({theta:.6})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub label: StepLabel,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<PulseSegment>,
    pub frames: Vec<FrameUpdate>,
    pub steps: Vec<Step>,
    /// Atom frequency at rest, per qudit (rad/s).
    pub idle_omega01: Vec<f64>,
}

impl Schedule {
    pub fn new(idle_omega01: Vec<f64>) -> Self {
        Self { idle_omega01, ..Default::default() }
    }

    pub fn total_duration(&self) -> f64 {
        let seg = self.segments.iter().map(|s| s.end()).fold(0.0, f64::max);
        let fr = self.frames.iter().map(|f| f.time).fold(0.0, f64::max);
        seg.max(fr)
    }

    /// Check segment durations and that no control line has overlapping segments.
    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            if !(s.duration > 0.0) || !s.start.is_finite() || s.start < 0.0 {
                return Err(Error::Validation(format!("segment at {} s has non-positive duration", s.start)));
            }
            if s.qudit >= self.idle_omega01.len() {
                return Err(Error::IndexOutOfRange(format!("segment addresses qudit {}", s.qudit)));
            }
        }
        let mut by_line: Vec<&PulseSegment> = self.segments.iter().collect();
        by_line.sort_by(|a, b| a.line().cmp(&b.line()).then(a.start.total_cmp(&b.start)));
        for w in by_line.windows(2) {
            if w[0].line() == w[1].line() && w[1].start < w[0].end() - 1e-15 {
                return Err(Error::Validation(format!("overlapping segments on {:?}", w[0].line())));
            }
        }
        Ok(())
    }

    /// Atom frequency of qudit `q` at time `t` and whether it is changing there.
    pub fn flux_at(&self, q: usize, t: f64) -> (f64, bool) {
        for s in &self.segments {
            if let SegmentKind::FluxShift(f) = &s.kind {
                if s.qudit == q && t > s.start && t < s.end() {
                    let local = t - s.start;
                    let ramping = local < f.rise || local > s.duration - f.rise;
                    return (f.value(local, s.duration), ramping);
                }
            }
        }
        (self.idle_omega01[q], false)
    }

    /// All times at which the piecewise structure of the controls changes.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut t = vec![0.0, self.total_duration()];
        for s in &self.segments {
            t.push(s.start);
            t.push(s.end());
            if let SegmentKind::FluxShift(f) = &s.kind {
                let r = f.rise.min(0.5 * s.duration);
                t.push(s.start + r);
                t.push(s.end() - r);
            }
        }
        t.extend(self.frames.iter().map(|f| f.time));
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        t
    }

    /// Serialize with times in ns, frequencies in GHz and amplitudes in MHz.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        let segs: Vec<_> = self
            .segments
            .iter()
            .map(|s| {
                let mut v = json!({
                    "qudit": s.qudit,
                    "start_ns": to_ns(s.start),
                    "duration_ns": to_ns(s.duration),
                });
                let o = v.as_object_mut().unwrap();
                match &s.kind {
                    SegmentKind::Microwave(m) => {
                        o.insert("kind".into(), json!("microwave"));
                        o.insert("amplitude_mhz".into(), json!(to_mhz(m.amplitude)));
                        o.insert("carrier_ghz".into(), json!(to_ghz(m.carrier)));
                        o.insert("phase_rad".into(), json!(m.phase));
                        o.insert("transition".into(), json!(m.transition));
                        o.insert("shape".into(), json!(m.shape));
                    }
                    SegmentKind::FluxShift(f) => {
                        o.insert("kind".into(), json!("flux_shift"));
                        o.insert("target_omega01_ghz".into(), json!(to_ghz(f.target_omega01)));
                        o.insert("idle_omega01_ghz".into(), json!(to_ghz(f.idle_omega01)));
                        o.insert("rise_ns".into(), json!(to_ns(f.rise)));
                    }
                    SegmentKind::Idle => {
                        o.insert("kind".into(), json!("idle"));
                    }
                    SegmentKind::Coupler => {
                        o.insert("kind".into(), json!("coupler"));
                    }
                }
                v
            })
            .collect();
        let steps: Vec<_> = self
            .steps
            .iter()
            .map(|s| json!({"step": s.label.to_string(), "start_ns": to_ns(s.start), "end_ns": to_ns(s.end)}))
            .collect();
        let frames: Vec<_> =
            self.frames.iter().map(|f| json!({"time_ns": to_ns(f.time), "phases": f.phases})).collect();
        json!({
            "total_duration_ns": to_ns(self.total_duration()),
            "idle_omega01_ghz": self.idle_omega01.iter().map(|w| to_ghz(*w)).collect::<Vec<_>>(),
            "segments": segs,
            "frame_updates": frames,
            "steps": steps,
        })
    }

    /// Waveform table sampled every `dt`: time (ns), then per qudit the atom
    /// frequency (GHz) and the drive I and Q quadratures (MHz).
    pub fn waveform_csv(&self, dt: f64) -> String {
        let nq = self.idle_omega01.len();
        let mut out = String::from("time_ns");
        for q in 0..nq {
            out.push_str(&format!(",flux_ghz_{q},drive_i_mhz_{q},drive_q_mhz_{q}"));
        }
        out.push('\n');
        let total = self.total_duration();
        let n = (total / dt).round() as usize;
        for k in 0..=n {
            let t = (k as f64 * dt).min(total);
            out.push_str(&format!("{:?}", to_ns(t)));
            for q in 0..nq {
                let (w, _) = self.flux_at(q, t);
                let (mut i, mut qd) = (0.0, 0.0);
                for s in &self.segments {
                    if let SegmentKind::Microwave(m) = &s.kind {
                        if s.qudit == q && t >= s.start && t <= s.end() {
                            let e = s.envelope(t);
                            i += e * m.phase.cos();
                            qd += e * m.phase.sin();
                        }
                    }
                }
                out.push_str(&format!(",{:?},{:?},{:?}", to_ghz(w), to_mhz(i), to_mhz(qd)));
            }
            out.push('\n');
        }
        out
    }
}
