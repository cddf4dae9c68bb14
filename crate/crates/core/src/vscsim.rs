//! Reduced averaged-dq model of a grid-following converter control loop and
//! a describing-function limit-cycle predictor.
//!
//! Units are kV, kA, MW, MVar, H, F and seconds. The voltage the current
//! controller feeds forward is stiff and aligned with the d axis (ideal PLL).
//! The converter sees the series impedance `R + Rg`, `L + Lg`; leave `Rg`
//! and `Lg` at zero when the feed-forward voltage is measured at the
//! connection point. Modulation is ideal unless the one-step transport delay
//! is switched on.
//!
//! ```text
//! d:  x_d   = Gdc(s)·(v_dc − v_dc*)            -> limit(d_outer) -> ī_d
//!     u_d   = Gi(s)·(ī_d − i_d)                -> limit(d_inner)
//!     L di_d/dt = u_d − R i_d                  (cross coupling cancelled)
//!     C dv_dc/dt = (P − 1.5 v_d i_d) / v_dc*   (linearised DC link)
//! q:  x_q   = Gq(s)·(Q − Q*),  Q = −1.5 v_d i_q -> limit(q_outer) -> ī_q
//!     u_q   = Gi(s)·(ī_q − i_q)                -> limit(q_inner)
//!     L di_q/dt = u_q − R i_q
//! ```
//!
//! Integration is classical RK4 with every limiter evaluated at each stage.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dq::{DqError, WaveformRecord};
use crate::hardlimit::{HardLimitError, HardLimitSpec, LimitKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VscError {
    #[error("invalid loop specification: {0}")]
    InvalidSpec(String),
    #[error("simulation diverged at t = {t:.6} s ({state} = {value:e})")]
    NumericalDivergence { t: f64, state: &'static str, value: f64 },
    #[error("no limit cycle: {0}")]
    NoLimitCycle(String),
    #[error(transparent)]
    Limit(#[from] HardLimitError),
    #[error(transparent)]
    Record(#[from] DqError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSite {
    DOuter,
    QOuter,
    DInner,
    QInner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl PiGains {
    pub const fn new(kp: f64, ki: f64) -> Self {
        Self { kp, ki }
    }

    /// `(kp s + ki) / s`
    pub fn transfer_function(&self) -> TransferFunction {
        TransferFunction {
            num: vec![self.kp, self.ki],
            den: vec![1.0, 0.0],
        }
    }

    fn valid(&self) -> bool {
        self.kp.is_finite() && self.ki.is_finite() && self.kp >= 0.0 && self.ki >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VscLoopSpec {
    pub r: f64,
    pub l: f64,
    pub rg: f64,
    pub lg: f64,
    pub c: f64,
    pub omega0: f64,
    /// Grid phase-voltage peak on the d axis.
    pub vd: f64,
    pub p: f64,
    pub vdc_ref: f64,
    pub q_ref: f64,
    pub gi: PiGains,
    pub gdc: PiGains,
    pub gq: PiGains,
    pub limits: BTreeMap<LimitSite, HardLimitSpec>,
    pub dt_sim: f64,
    pub sample_dt: f64,
    /// Any state magnitude beyond this counts as divergence.
    pub state_bound: f64,
    /// Initial DC-voltage offset from the equilibrium, to seed oscillation.
    pub vdc_perturbation: f64,
    pub transport_delay: bool,
}

impl VscLoopSpec {
    pub fn r_total(&self) -> f64 {
        self.r + self.rg
    }

    pub fn l_total(&self) -> f64 {
        self.l + self.lg
    }

    /// Operating-point d current `P / (1.5 v_d)`.
    pub fn id0(&self) -> f64 {
        self.p / (1.5 * self.vd)
    }

    /// Operating-point q current `−Q* / (1.5 v_d)`.
    pub fn iq0(&self) -> f64 {
        -self.q_ref / (1.5 * self.vd)
    }

    pub fn limit(&self, site: LimitSite) -> Option<&HardLimitSpec> {
        self.limits.get(&site)
    }

    pub fn with_limit(mut self, site: LimitSite, spec: HardLimitSpec) -> Self {
        self.limits.insert(site, spec);
        self
    }

    pub fn without_limits(mut self) -> Self {
        self.limits.clear();
        self
    }

    /// Hex SHA-256 of the JSON-serialised spec.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serialises");
        hex(&Sha256::digest(json))
    }

    /// Small-signal closed-loop poles of the d and q chains for inner gains `gi`.
    pub fn linear_poles(&self, gi: PiGains) -> Vec<Complex64> {
        let (r, l) = (self.r_total(), self.l_total());
        let inner = [l, r + gi.kp, gi.ki];
        let gi_num = [gi.kp, gi.ki];
        let k = 1.5 * self.vd / (self.c * self.vdc_ref);
        let d = poly_add(
            &poly_mul(&[1.0, 0.0, 0.0], &inner),
            &poly_scale(&poly_mul(&[self.gdc.kp, self.gdc.ki], &gi_num), k),
        );
        let kq = 1.5 * self.vd;
        let q = poly_add(
            &poly_mul(&[1.0, 0.0], &inner),
            &poly_scale(&poly_mul(&[self.gq.kp, self.gq.ki], &gi_num), kq),
        );
        let mut poles = poly_roots(&d);
        poles.extend(poly_roots(&q));
        poles
    }

    pub fn validate(&self, events: &[Event]) -> Result<(), VscError> {
        let bad = |m: String| Err(VscError::InvalidSpec(m));
        for (name, v) in [
            ("R", self.r),
            ("L", self.l),
            ("C", self.c),
            ("vd", self.vd),
            ("vdc_ref", self.vdc_ref),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("Rg", self.rg), ("Lg", self.lg), ("omega0", self.omega0)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.p.is_finite() && self.q_ref.is_finite() && self.vdc_perturbation.is_finite()) {
            return bad("operating point must be finite".into());
        }
        if !(self.dt_sim.is_finite() && self.dt_sim > 0.0) {
            return bad(format!("dt_sim {}", self.dt_sim));
        }
        if !(self.state_bound > 0.0) {
            return bad(format!("state bound {}", self.state_bound));
        }
        sample_stride(self.sample_dt, self.dt_sim)?;
        let mut gains = vec![self.gi];
        for e in events {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return bad(format!("event time {}", e.t));
            }
            if let EventAction::SetGi(g) = e.action {
                gains.push(g);
            }
        }
        for g in [self.gdc, self.gq].iter().chain(&gains) {
            if !g.valid() {
                return bad(format!("PI gains {g:?}"));
            }
        }
        for g in gains {
            let fastest = self.linear_poles(g).iter().map(|p| p.norm()).fold(0.0, f64::max);
            if self.dt_sim * fastest >= 0.1 {
                return bad(format!(
                    "dt_sim {} does not resolve the fastest pole |λ| = {fastest:.1} 1/s",
                    self.dt_sim
                ));
            }
        }
        Ok(())
    }
}

fn sample_stride(sample_dt: f64, dt_sim: f64) -> Result<usize, VscError> {
    let ratio = sample_dt / dt_sim;
    let stride = ratio.round();
    if !(stride >= 1.0 && (ratio - stride).abs() < 1e-9 * ratio) {
        return Err(VscError::InvalidSpec(format!(
            "sample_dt {sample_dt} is not a whole multiple of dt_sim {dt_sim}"
        )));
    }
    Ok(stride as usize)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EventAction {
    SetGi(PiGains),
    SetGdc(PiGains),
    SetGq(PiGains),
    SetPower(f64),
    SetQRef(f64),
    SetVdcRef(f64),
    /// Step added to the DC-link voltage state.
    PerturbVdc(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub action: EventAction,
}

impl Event {
    pub fn new(t: f64, action: EventAction) -> Self {
        Self { t, action }
    }
}

const STATE_NAMES: [&str; 7] = ["v_dc", "xi_dc", "xi_id", "i_d", "xi_q", "xi_iq", "i_q"];
const V: usize = 0;
const XDC: usize = 1;
const XID: usize = 2;
const ID: usize = 3;
const XQ: usize = 4;
const XIQ: usize = 5;
const IQ: usize = 6;

type State = [f64; 7];

#[derive(Debug, Clone, Copy)]
struct Params {
    gi: PiGains,
    gdc: PiGains,
    gq: PiGains,
    p: f64,
    q_ref: f64,
    vdc_ref: f64,
}

impl Params {
    fn apply(&mut self, a: EventAction, s: &mut State) {
        match a {
            EventAction::PerturbVdc(dv) => s[V] += dv,
            EventAction::SetGi(g) => self.gi = g,
            EventAction::SetGdc(g) => self.gdc = g,
            EventAction::SetGq(g) => self.gq = g,
            EventAction::SetPower(p) => self.p = p,
            EventAction::SetQRef(q) => self.q_ref = q,
            EventAction::SetVdcRef(v) => self.vdc_ref = v,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Signals {
    xd: f64,
    id_ref: f64,
    ud: f64,
    q: f64,
    iq_ref: f64,
    uq: f64,
}

struct Model<'a> {
    spec: &'a VscLoopSpec,
    r: f64,
    l: f64,
    // linearisation voltage of the DC link
    v_lin: f64,
    lim: [Option<HardLimitSpec>; 4],
}

impl<'a> Model<'a> {
    fn new(spec: &'a VscLoopSpec) -> Self {
        let lim = [
            spec.limit(LimitSite::DOuter).copied(),
            spec.limit(LimitSite::QOuter).copied(),
            spec.limit(LimitSite::DInner).copied(),
            spec.limit(LimitSite::QInner).copied(),
        ];
        Self {
            spec,
            r: spec.r_total(),
            l: spec.l_total(),
            v_lin: spec.vdc_ref,
            lim,
        }
    }

    fn clamp(&self, site: usize, x: f64) -> f64 {
        self.lim[site].map_or(x, |l| l.apply(x))
    }

    fn signals(&self, s: &State, p: &Params) -> Signals {
        let xd = p.gdc.kp * (s[V] - p.vdc_ref) + s[XDC];
        let id_ref = self.clamp(0, xd);
        let ud = self.clamp(2, p.gi.kp * (id_ref - s[ID]) + s[XID]);
        let q = -1.5 * self.spec.vd * s[IQ];
        let xq = p.gq.kp * (q - p.q_ref) + s[XQ];
        let iq_ref = self.clamp(1, xq);
        let uq = self.clamp(3, p.gi.kp * (iq_ref - s[IQ]) + s[XIQ]);
        Signals {
            xd,
            id_ref,
            ud,
            q,
            iq_ref,
            uq,
        }
    }

    /// Converter voltage commands `(v'_d, v'_q)` with feed-forward and decoupling.
    fn modulation(&self, s: &State, sig: &Signals) -> (f64, f64) {
        let wl = self.spec.omega0 * self.l;
        (sig.ud + self.spec.vd - wl * s[IQ], sig.uq + wl * s[ID])
    }

    fn derivative(&self, s: &State, p: &Params, held: Option<(f64, f64)>) -> State {
        let sig = self.signals(s, p);
        let (vcd, vcq) = held.unwrap_or_else(|| self.modulation(s, &sig));
        let wl = self.spec.omega0 * self.l;
        [
            (p.p - 1.5 * self.spec.vd * s[ID]) / (self.spec.c * self.v_lin),
            p.gdc.ki * (s[V] - p.vdc_ref),
            p.gi.ki * (sig.id_ref - s[ID]),
            (vcd - self.spec.vd - self.r * s[ID] + wl * s[IQ]) / self.l,
            p.gq.ki * (sig.q - p.q_ref),
            p.gi.ki * (sig.iq_ref - s[IQ]),
            (vcq - self.r * s[IQ] - wl * s[ID]) / self.l,
        ]
    }
}

fn axpy(s: &State, h: f64, k: &State) -> State {
    let mut out = *s;
    for i in 0..7 {
        out[i] += h * k[i];
    }
    out
}

/// Uniformly sampled simulator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub dt: f64,
    pub nominal_freq_hz: f64,
    pub t: Vec<f64>,
    pub id: Vec<f64>,
    pub iq: Vec<f64>,
    pub vdc: Vec<f64>,
    /// d-outer limiter output (current reference).
    pub id_ref: Vec<f64>,
    /// d-outer limiter input.
    pub xd_outer: Vec<f64>,
    pub iq_ref: Vec<f64>,
    pub spec_digest: String,
    pub events: Vec<Event>,
}

impl SimRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.t.partition_point(|&x| x < t - 1e-9 * self.dt)
    }

    /// `(i_d, i_q)` from `start` on, `len` samples at most.
    pub fn to_waveform(&self, start: usize, len: usize) -> Result<WaveformRecord, VscError> {
        let end = (start + len).min(self.len());
        Ok(WaveformRecord::dq(
            self.dt,
            self.nominal_freq_hz,
            self.id[start..end].to_vec(),
            self.iq[start..end].to_vec(),
        )?)
    }
}

/// Integrates the loop for `duration` seconds from the operating point.
pub fn simulate(spec: &VscLoopSpec, duration: f64, events: &[Event]) -> Result<SimRecord, VscError> {
    spec.validate(events)?;
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(VscError::InvalidSpec(format!("duration {duration}")));
    }
    let model = Model::new(spec);
    let stride = sample_stride(spec.sample_dt, spec.dt_sim)?;
    let dt = spec.dt_sim;
    let steps = (duration / dt).round() as usize;

    let mut events = events.to_vec();
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut pending = events.iter().peekable();

    let mut p = Params {
        gi: spec.gi,
        gdc: spec.gdc,
        gq: spec.gq,
        p: spec.p,
        q_ref: spec.q_ref,
        vdc_ref: spec.vdc_ref,
    };
    let (id0, iq0) = (spec.id0(), spec.iq0());
    let mut s: State = [
        spec.vdc_ref + spec.vdc_perturbation,
        id0,
        model.r * id0,
        id0,
        iq0,
        model.r * iq0,
        iq0,
    ];

    let cap = steps / stride + 1;
    let mut rec = SimRecord {
        dt: spec.sample_dt,
        nominal_freq_hz: spec.omega0 / (2.0 * PI),
        t: Vec::with_capacity(cap),
        id: Vec::with_capacity(cap),
        iq: Vec::with_capacity(cap),
        vdc: Vec::with_capacity(cap),
        id_ref: Vec::with_capacity(cap),
        xd_outer: Vec::with_capacity(cap),
        iq_ref: Vec::with_capacity(cap),
        spec_digest: spec.digest(),
        events: events.clone(),
    };
    let mut held: Option<(f64, f64)> = None;

    for k in 0..=steps {
        let t = k as f64 * dt;
        while let Some(e) = pending.next_if(|e| e.t <= t + 0.5 * dt) {
            p.apply(e.action, &mut s);
        }
        let sig = model.signals(&s, &p);
        if k % stride == 0 {
            rec.t.push(t);
            rec.id.push(s[ID]);
            rec.iq.push(s[IQ]);
            rec.vdc.push(s[V]);
            rec.id_ref.push(sig.id_ref);
            rec.xd_outer.push(sig.xd);
            rec.iq_ref.push(sig.iq_ref);
        }
        if k == steps {
            break;
        }
        let now = model.modulation(&s, &sig);
        let apply = if spec.transport_delay {
            Some(held.unwrap_or(now))
        } else {
            None
        };
        held = Some(now);

        let k1 = model.derivative(&s, &p, apply);
        let k2 = model.derivative(&axpy(&s, 0.5 * dt, &k1), &p, apply);
        let k3 = model.derivative(&axpy(&s, 0.5 * dt, &k2), &p, apply);
        let k4 = model.derivative(&axpy(&s, dt, &k3), &p, apply);
        for i in 0..7 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some((i, v)) = s.iter().enumerate().find(|(_, v)| !(v.abs() <= spec.state_bound)) {
            return Err(VscError::NumericalDivergence {
                t: t + dt,
                state: STATE_NAMES[i],
                value: *v,
            });
        }
    }
    Ok(rec)
}

/// A ready-made scenario: spec, event schedule and recording window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub spec: VscLoopSpec,
    pub events: Vec<Event>,
    pub duration: f64,
    /// Samples before this time are start-up transient.
    pub record_start: f64,
    pub record_len: usize,
}

impl Scenario {
    pub fn run(&self) -> Result<SimRecord, VscError> {
        simulate(&self.spec, self.duration, &self.events)
    }

    /// Runs and returns the recording window as a dq waveform.
    pub fn record(&self) -> Result<(SimRecord, WaveformRecord), VscError> {
        let sim = self.run()?;
        let start = sim.index_at(self.record_start);
        let w = sim.to_waveform(start, self.record_len)?;
        Ok((sim, w))
    }

    /// Inner gains in force at the end of the run.
    pub fn final_gi(&self) -> PiGains {
        self.events
            .iter()
            .filter_map(|e| match e.action {
                EventAction::SetGi(g) => Some((e.t, g)),
                _ => None,
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map_or(self.spec.gi, |(_, g)| g)
    }
}

pub const CASE2_STABLE_GI: PiGains = PiGains::new(0.2, 20.0);
pub const CASE2_UNSTABLE_GI: PiGains = PiGains::new(0.012, 12.5);
/// Headroom of the d-outer limit above the operating-point current (kA).
pub const CASE2_D_OUTER_HEADROOM: f64 = 0.05;

/// Converter parameters of the PMSG grid-side case: 0.69 kV grid,
/// 0.34 MW, 200 mF DC link held at 1 kV, with the d-outer limit just above
/// the operating current.
pub fn case2_spec() -> VscLoopSpec {
    let mut spec = VscLoopSpec {
        r: 0.001,
        l: 0.35e-3,
        rg: 0.0,
        lg: 0.0,
        c: 0.2,
        omega0: 2.0 * PI * 50.0,
        vd: 0.69 * (2.0f64 / 3.0).sqrt(),
        p: 0.34,
        vdc_ref: 1.0,
        q_ref: 0.0,
        gi: CASE2_STABLE_GI,
        gdc: PiGains::new(9.0, 500.0),
        gq: PiGains::new(0.3, 50.28),
        limits: BTreeMap::new(),
        dt_sim: 50e-6,
        sample_dt: 1e-3,
        state_bound: 1e3,
        vdc_perturbation: 1e-3,
        transport_delay: false,
    };
    let head = HardLimitSpec::unilateral(CASE2_D_OUTER_HEADROOM, spec.id0()).expect("valid limit");
    spec.limits.insert(LimitSite::DOuter, head);
    spec
}

/// Stable start, inner gains switched to the destabilising pair at 1 s with a
/// small DC-voltage kick, then 32768 samples recorded at 1 kHz once the limit
/// cycle has settled.
pub fn case2_reduced() -> Scenario {
    let record_start = 6.0;
    let record_len = 32_768;
    let spec = case2_spec();
    let duration = record_start + record_len as f64 * spec.sample_dt;
    Scenario {
        name: "case2-reduced".into(),
        events: vec![
            Event::new(1.0, EventAction::SetGi(CASE2_UNSTABLE_GI)),
            Event::new(1.0, EventAction::PerturbVdc(1e-3)),
        ],
        spec,
        duration,
        record_start,
        record_len,
    }
}

pub fn preset(name: &str) -> Option<Scenario> {
    match name {
        "case2-reduced" => Some(case2_reduced()),
        _ => None,
    }
}

pub const PRESETS: &[&str] = &["case2-reduced"];

/// Rational transfer function, coefficients in descending powers of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, VscError> {
        let tf = Self {
            num: trim(num),
            den: trim(den),
        };
        if tf.den.is_empty() || tf.num.is_empty() {
            return Err(VscError::InvalidSpec("empty polynomial".into()));
        }
        if tf.num.iter().chain(&tf.den).any(|c| !c.is_finite()) {
            return Err(VscError::InvalidSpec("non-finite coefficient".into()));
        }
        if tf.num.len() > tf.den.len() {
            return Err(VscError::InvalidSpec("transfer function is improper".into()));
        }
        Ok(tf)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    pub fn at_freq(&self, freq_hz: f64) -> Complex64 {
        self.eval(Complex64::new(0.0, 2.0 * PI * freq_hz))
    }

    /// Static gain, `None` when the denominator vanishes at `s = 0`.
    pub fn dc_gain(&self) -> Option<f64> {
        let d = *self.den.last().expect("non-empty");
        (d != 0.0).then(|| self.num.last().expect("non-empty") / d)
    }

    pub fn series(&self, other: &Self) -> Self {
        Self {
            num: poly_mul(&self.num, &other.num),
            den: poly_mul(&self.den, &other.den),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            num: poly_scale(&self.num, k),
            den: self.den.clone(),
        }
    }
}

fn trim(mut p: Vec<f64>) -> Vec<f64> {
    let lead = p.iter().position(|c| *c != 0.0).unwrap_or(p.len());
    p.drain(..lead);
    p
}

fn poly_eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter().fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, x) in a.iter().enumerate() {
        out[n - a.len() + i] += x;
    }
    for (i, x) in b.iter().enumerate() {
        out[n - b.len() + i] += x;
    }
    out
}

fn poly_scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|c| c * k).collect()
}

/// Polynomial roots by Durand-Kerner iteration.
pub fn poly_roots(p: &[f64]) -> Vec<Complex64> {
    let p = trim(p.to_vec());
    let deg = p.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let monic: Vec<f64> = p.iter().map(|c| c / p[0]).collect();
    let radius = 1.0 + monic[1..].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let seed = Complex64::from_polar(1.0, 0.4);
    let mut z: Vec<Complex64> = (0..deg)
        .map(|k| Complex64::from_polar(radius, 0.0) * seed.powu(k as u32))
        .collect();
    for _ in 0..2000 {
        let mut moved = 0.0f64;
        for i in 0..deg {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            let step = poly_eval(&monic, z[i]) / denom;
            z[i] -= step;
            moved = moved.max(step.norm() / z[i].norm().max(1e-300));
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Search region for the harmonic-balance solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    pub amp_max: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            freq_min_hz: 1e-3,
            freq_max_hz: 1e3,
            amp_max: 1e3,
        }
    }
}

/// A limiter in negative feedback with a linear part: the limiter input is
/// `x = −G(s) y` where `y` is the limiter output. Both are deviations from
/// the operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LureLoopSpec {
    pub g: TransferFunction,
    pub limiter: HardLimitSpec,
    pub search: SearchBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCyclePrediction {
    pub freq_hz: f64,
    /// Fundamental amplitude at the limiter input.
    pub amplitude: f64,
    /// Mean of the limiter input (nonzero for unilateral limits).
    pub bias: f64,
    /// Describing-function gain at the solution.
    pub gain: f64,
}

/// Integrals of the excess `x − level` over the part of the period where the
/// drive `x = bias + A sin θ` exceeds `level`: `(∫ e dθ, ∫ e sin θ dθ)`.
fn excess_integrals(level: f64, amplitude: f64, bias: f64) -> (f64, f64) {
    let alpha = ((level - bias) / amplitude).clamp(-1.0, 1.0).asin();
    let width = PI - 2.0 * alpha;
    let d = bias - level;
    (
        d * width + 2.0 * amplitude * alpha.cos(),
        2.0 * d * alpha.cos() + amplitude * 0.5 * (width + (2.0 * alpha).sin()),
    )
}

/// Limiter output mean `Y0` and fundamental gain `N = (B1 + jA1)/A` for the
/// drive `bias + A sin θ`. Memoryless clamps give `A1 = 0`.
fn dual_input(limiter: &HardLimitSpec, amplitude: f64, bias: f64) -> (f64, Complex64) {
    let (u0, u1) = excess_integrals(limiter.upper(), amplitude, bias);
    let (l0, l1) = match limiter.lower() {
        // mirror: the deficit below −l is the excess of −x above l
        Some(lo) => excess_integrals(-lo, amplitude, -bias),
        None => (0.0, 0.0),
    };
    let y0 = bias - (u0 - l0) / (2.0 * PI);
    let b1 = amplitude - (u1 + l1) / PI;
    (y0, Complex64::new(b1 / amplitude, 0.0))
}

fn bisect<F: FnMut(f64) -> Result<f64, VscError>>(mut f: F, mut lo: f64, mut hi: f64) -> Result<f64, VscError> {
    let mut flo = f(lo)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bias satisfying the DC balance `B + G(0) Y0(B, A) = 0`; with an
/// integrator in `G` that reduces to `Y0 = 0`.
fn balance_bias(lp: &LureLoopSpec, amplitude: f64) -> Result<f64, VscError> {
    let g0 = lp.g.dc_gain();
    let h = |b: f64| -> Result<f64, VscError> {
        let (y0, _) = dual_input(&lp.limiter, amplitude, b);
        Ok(match g0 {
            None => y0,
            Some(g) => b + g * y0,
        })
    };
    let span = (1.0 + g0.map_or(0.0, f64::abs)) * (amplitude + lp.limiter.upper().abs()) + 1.0;
    let grid: Vec<f64> = (0..=400).map(|i| -span + 2.0 * span * i as f64 / 400.0).collect();
    let mut prev = (grid[0], h(grid[0])?);
    for &b in &grid[1..] {
        let v = h(b)?;
        if v == 0.0 {
            return Ok(b);
        }
        if (v < 0.0) != (prev.1 < 0.0) {
            return bisect(h, prev.0, b);
        }
        prev = (b, v);
    }
    Err(VscError::NoLimitCycle(format!(
        "no DC balance at amplitude {amplitude}"
    )))
}

/// Solves harmonic balance `N(A, B) G(jω) = −1` together with the DC balance.
///
/// For a memoryless limiter `N` is real, so the complex equation splits into
/// `Im G(jω) = 0` (phase crossover, any `A`) and `N(A) = −1/Re G(jω)`, each
/// solved by bracketing and bisection.
pub fn predict_limit_cycle(lp: &LureLoopSpec) -> Result<LimitCyclePrediction, VscError> {
    let sb = lp.search;
    if !(sb.freq_min_hz > 0.0 && sb.freq_max_hz > sb.freq_min_hz && sb.amp_max > 0.0) {
        return Err(VscError::InvalidSpec(format!("search box {sb:?}")));
    }
    let im = |f: f64| -> Result<f64, VscError> { Ok(lp.g.at_freq(f).im) };
    let n_scan = 4000;
    let ratio = (sb.freq_max_hz / sb.freq_min_hz).powf(1.0 / n_scan as f64);
    let mut crossings = Vec::new();
    let mut prev = (sb.freq_min_hz, im(sb.freq_min_hz)?);
    for i in 1..=n_scan {
        let f = sb.freq_min_hz * ratio.powi(i);
        let v = im(f)?;
        if (v < 0.0) != (prev.1 < 0.0) {
            let fc = bisect(im, prev.0, f)?;
            let re = lp.g.at_freq(fc).re;
            if re < 0.0 && re.is_finite() {
                crossings.push((fc, re));
            }
        }
        prev = (f, v);
    }
    if crossings.is_empty() {
        return Err(VscError::NoLimitCycle(
            "no phase crossover with negative real part".into(),
        ));
    }

    // clipping starts once the undisturbed drive reaches the nearest clamp
    let onset = match lp.limiter.lower() {
        Some(lo) => lp.limiter.upper().abs().min(lo.abs()),
        None => lp.limiter.upper().abs(),
    };
    let a_lo = onset * (1.0 + 1e-9);
    if a_lo >= sb.amp_max {
        return Err(VscError::NoLimitCycle(
            "limiter never engages inside the search box".into(),
        ));
    }
    let gain = |a: f64| -> Result<f64, VscError> {
        let b = balance_bias(lp, a)?;
        Ok(dual_input(&lp.limiter, a, b).1.re)
    };
    for (fc, re) in crossings {
        let need = -1.0 / re;
        let f = |a: f64| -> Result<f64, VscError> { Ok(gain(a)? - need) };
        let steps = 400;
        let r = (sb.amp_max / a_lo).powf(1.0 / steps as f64);
        let mut prev = (a_lo, f(a_lo)?);
        for i in 1..=steps {
            let a = a_lo * r.powi(i);
            let v = f(a)?;
            if (v < 0.0) != (prev.1 < 0.0) {
                let amp = bisect(f, prev.0, a)?;
                let bias = balance_bias(lp, amp)?;
                return Ok(LimitCyclePrediction {
                    freq_hz: fc,
                    amplitude: amp,
                    bias,
                    gain: need,
                });
            }
            prev = (a, v);
        }
    }
    Err(VscError::NoLimitCycle(
        "describing-function gain never meets the required value inside the search box".into(),
    ))
}

/// The d-outer limiter's loop: `G = Gdc · Gi/(sL + R + Gi) · K/s` with
/// `K = 1.5 v_d / (C v_dc*)`, limiter shifted to deviation coordinates.
pub fn d_outer_lure_loop(spec: &VscLoopSpec, gi: PiGains) -> Result<LureLoopSpec, VscError> {
    let lim = spec
        .limit(LimitSite::DOuter)
        .ok_or_else(|| VscError::InvalidSpec("no d_outer limit configured".into()))?;
    let id0 = spec.id0();
    let limiter = match lim.kind {
        LimitKind::Unilateral => HardLimitSpec::unilateral(lim.upper() - id0, 0.0)?,
        LimitKind::Bilateral => {
            if id0 != 0.0 {
                return Err(VscError::InvalidSpec(
                    "a bilateral d_outer limit needs a zero operating current".into(),
                ));
            }
            *lim
        }
    };
    let inner = TransferFunction::new(vec![gi.kp, gi.ki], vec![spec.l_total(), spec.r_total() + gi.kp, gi.ki])?;
    let k = 1.5 * spec.vd / (spec.c * spec.vdc_ref);
    let g = spec
        .gdc
        .transfer_function()
        .series(&inner)
        .series(&TransferFunction::new(vec![k], vec![1.0, 0.0])?);
    Ok(LureLoopSpec {
        g,
        limiter,
        search: SearchBox {
            freq_min_hz: 0.1,
            freq_max_hz: spec.omega0 / (2.0 * PI),
            amp_max: 10.0,
        },
    })
}

/// Relay-like textbook loop `K / (s (s+1)^2)` with a bilateral limit `±a`.
pub fn relay_textbook_loop(k: f64, a: f64) -> Result<LureLoopSpec, VscError> {
    Ok(LureLoopSpec {
        g: TransferFunction::new(vec![k], vec![1.0, 2.0, 1.0, 0.0])?,
        limiter: HardLimitSpec::bilateral(a)?,
        search: SearchBox::default(),
    })
}

/// Frequency, fundamental amplitude and mean of a settled oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleMeasurement {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub bias: f64,
    /// `(max − min) / mean` of the per-cycle peak-to-peak values.
    pub amplitude_spread: f64,
    pub cycles: usize,
}

/// Measures a steady oscillation from upward mean crossings. Returns `None`
/// with fewer than three crossings.
pub fn measure_limit_cycle(x: &[f64], dt: f64) -> Option<LimitCycleMeasurement> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let ups: Vec<f64> = x
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < mean && w[1] >= mean)
        .map(|(i, w)| i as f64 + (mean - w[0]) / (w[1] - w[0]))
        .collect();
    if ups.len() < 3 {
        return None;
    }
    let cycles = ups.len() - 1;
    let period = (ups[cycles] - ups[0]) / cycles as f64 * dt;
    let freq_hz = 1.0 / period;

    let (i0, i1) = (ups[0].ceil() as usize, ups[cycles].floor() as usize);
    let seg = &x[i0..i1];
    let omega = 2.0 * PI * freq_hz;
    let mut c = Complex64::new(0.0, 0.0);
    for (j, v) in seg.iter().enumerate() {
        c += v * Complex64::from_polar(1.0, -omega * j as f64 * dt);
    }
    let amplitude = 2.0 * c.norm() / seg.len() as f64;
    let bias = seg.iter().sum::<f64>() / seg.len() as f64;

    let pp: Vec<f64> = ups
        .windows(2)
        .map(|w| {
            let cyc = &x[w[0].ceil() as usize..=(w[1].floor() as usize).min(x.len() - 1)];
            let hi = cyc.iter().copied().fold(f64::MIN, f64::max);
            let lo = cyc.iter().copied().fold(f64::MAX, f64::min);
            hi - lo
        })
        .collect();
    let pp_mean = pp.iter().sum::<f64>() / pp.len() as f64;
    let spread = (pp.iter().copied().fold(f64::MIN, f64::max) - pp.iter().copied().fold(f64::MAX, f64::min)) / pp_mean;
    Some(LimitCycleMeasurement {
        freq_hz,
        amplitude,
        bias,
        amplitude_spread: spread,
        cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn roots_of_known_polynomials() {
        let mut r = poly_roots(&[1.0, -6.0, 11.0, -6.0]);
        r.sort_by(|a, b| a.re.total_cmp(&b.re));
        for (z, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((z - want).norm() < 1e-10);
        }
        let r = poly_roots(&[1.0, 0.0, 4.0]);
        assert!(r.iter().all(|z| (z.norm() - 2.0).abs() < 1e-12 && z.re.abs() < 1e-12));
    }

    #[test]
    fn case2_poles() {
        let spec = case2_spec();
        let stable = spec.linear_poles(CASE2_STABLE_GI);
        assert!(stable.iter().all(|p| p.re < 0.0));
        let unstable = spec.linear_poles(CASE2_UNSTABLE_GI);
        let rhp: Vec<_> = unstable.iter().filter(|p| p.re > 0.0).collect();
        assert_eq!(rhp.len(), 2);
        // oracle: independent companion-matrix eigenvalues of the same quartic
        assert!((rhp[0].re - 1.97).abs() < 0.01);
        assert!((rhp[0].im.abs() / (2.0 * PI) - 29.78).abs() < 0.01);
    }

    #[test]
    fn transfer_function_basics() {
        assert!(TransferFunction::new(vec![1.0, 0.0, 0.0], vec![1.0, 1.0]).is_err());
        let g = TransferFunction::new(vec![2.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(g.dc_gain(), Some(2.0));
        let h = g.at_freq(1.0 / (2.0 * PI));
        assert!((h - Complex64::new(1.0, -1.0)).norm() < 1e-15);
        let pi = PiGains::new(1.0, 1.0).transfer_function();
        assert_eq!(pi.dc_gain(), None);
    }

    #[test]
    fn stable_loop_tracks_reference() {
        let spec = case2_spec().without_limits();
        let sim = simulate(&spec, 3.0, &[]).unwrap();
        let id = *sim.id.last().unwrap();
        assert!((id - spec.id0()).abs() < 1e-6 * spec.id0());
        assert!((sim.vdc.last().unwrap() - spec.vdc_ref).abs() < 1e-6);
    }

    #[test]
    fn unstable_loop_without_limit_diverges() {
        let mut spec = case2_spec().without_limits();
        spec.state_bound = 10.0;
        let ev = [Event::new(0.5, EventAction::SetGi(CASE2_UNSTABLE_GI))];
        let err = simulate(&spec, 20.0, &ev).unwrap_err();
        assert!(matches!(err, VscError::NumericalDivergence { .. }), "{err}");
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut spec = case2_spec();
        spec.c = 0.0;
        assert!(spec.validate(&[]).is_err());
        let mut spec = case2_spec();
        spec.sample_dt = 1.3e-4;
        assert!(spec.validate(&[]).is_err());
        let mut spec = case2_spec();
        spec.dt_sim = 1e-3;
        spec.sample_dt = 1e-3;
        let fast = [Event::new(0.0, EventAction::SetGi(PiGains::new(5.0, 20.0)))];
        assert!(spec.validate(&fast).is_err());
    }

    #[test]
    fn dual_input_matches_quadrature() {
        use crate::hardlimit::{fourier_quadrature, SineInput};
        let limits = [
            HardLimitSpec::bilateral(0.7).unwrap(),
            HardLimitSpec::unilateral(0.05, 0.0).unwrap(),
            HardLimitSpec::unilateral(0.4, -0.2).unwrap(),
        ];
        for lim in limits {
            for (amp, bias) in [
                (0.03, 0.0),
                (0.066, 0.0033),
                (1.0, 0.3),
                (2.0, -0.5),
                (0.5, 3.0),
                (0.5, -3.0),
            ] {
                let input = SineInput::new(amp, 1.0, bias).unwrap();
                let (y0, n) = dual_input(&lim, amp, bias);
                let c0 = fourier_quadrature(&lim, &input, 0).cos * 0.5;
                let c1 = fourier_quadrature(&lim, &input, 1);
                assert!((y0 - c0).abs() < 1e-12, "{lim:?} {amp} {bias}");
                assert!((n.re * amp - c1.sin).abs() < 1e-12, "{lim:?} {amp} {bias}");
                assert!(c1.cos.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relay_textbook_case() {
        let lp = relay_textbook_loop(20.0, 0.05).unwrap();
        let pred = predict_limit_cycle(&lp).unwrap();
        assert!(close(pred.freq_hz, 1.0 / (2.0 * PI), 1e-6));
        // ideal-relay harmonic balance: A = 4 a |G(j1)| / π with |G(j1)| = K/2
        assert!(close(pred.amplitude, 4.0 * 0.05 * 10.0 / PI, 0.02));
        assert!(pred.bias.abs() < 1e-9);
    }

    #[test]
    fn no_limit_cycle_when_gain_is_low() {
        let lp = relay_textbook_loop(1.0, 0.05).unwrap();
        assert!(matches!(predict_limit_cycle(&lp), Err(VscError::NoLimitCycle(_))));
        let lp = LureLoopSpec {
            g: TransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap(),
            limiter: HardLimitSpec::bilateral(1.0).unwrap(),
            search: SearchBox::default(),
        };
        assert!(matches!(predict_limit_cycle(&lp), Err(VscError::NoLimitCycle(_))));
    }

    #[test]
    fn measurement_of_pure_sine() {
        let dt = 1e-3;
        let x: Vec<f64> = (0..5000)
            .map(|n| 0.3 + 2.0 * (2.0 * PI * 7.3 * n as f64 * dt).sin())
            .collect();
        let m = measure_limit_cycle(&x, dt).unwrap();
        assert!(close(m.freq_hz, 7.3, 1e-4));
        assert!(close(m.amplitude, 2.0, 1e-3));
        assert!((m.bias - 0.3).abs() < 1e-3);
        assert!(m.amplitude_spread < 0.01);
    }
}
