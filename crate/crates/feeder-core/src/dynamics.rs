//! Quasi-static phasor simulation of fault scenarios on a reduced
//! three-segment model: per-phase series-chain network solves, per-segment
//! per-phase contactor state machines gating aggregate single-phase motor
//! loads, motor stall logic, and event-metric extraction.
//!
//! Electromagnetic transients are out of scope; sub-cycle effects such as
//! point-on-wave stall sensitivity are not modelled, and the fault angle is
//! recorded as scenario metadata only.

use crate::model::{Complex, PerUnitBases};
use crate::reduction::ReducedFeederModel;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("total sequence impedance of the fault divider is zero")]
    ZeroSequenceImpedance,
    #[error("network fixed point diverged at step {step} (phase {phase})")]
    NetworkDiverged { step: usize, phase: usize },
    #[error("scenario grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    /// Single line to ground on phase A at the subtransmission bus.
    SlgPhaseA,
    ThreePhase,
}

/// Fault scenario applied to the subtransmission side of the feeder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub label: String,
    pub fault_type: FaultType,
    pub fault_start_ms: f64,
    pub fault_duration_ms: f64,
    /// Fault impedance at the subtransmission bus, per-unit.
    pub fault_impedance_pu: Complex,
    /// Point-on-wave angle at fault initiation; metadata only in the phasor
    /// domain.
    pub fault_angle_deg: f64,
    /// Positive/negative-sequence source impedance, per-unit.
    pub subtransmission_source_z_pu: Complex,
    /// Zero-sequence source impedance as a multiple of the positive sequence.
    pub zero_seq_scale: f64,
    pub dt_ms: f64,
    pub t_end_ms: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::moderate()
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.dt_ms <= 0.0 {
            return Err(DynamicsError::InvalidScenario("dt must be positive".into()));
        }
        if self.fault_duration_ms >= self.t_end_ms {
            return Err(DynamicsError::InvalidScenario(
                "fault duration must be shorter than the simulation".into(),
            ));
        }
        if self.fault_start_ms < 0.0
            || self.fault_start_ms + self.fault_duration_ms > self.t_end_ms
        {
            return Err(DynamicsError::InvalidScenario(
                "fault window must fit inside the simulation".into(),
            ));
        }
        Ok(())
    }

    fn base(label: &str, fault_impedance: f64) -> Self {
        Self {
            label: label.into(),
            fault_type: FaultType::SlgPhaseA,
            fault_start_ms: 100.0,
            fault_duration_ms: 80.0,
            fault_impedance_pu: Complex::new(fault_impedance, 0.0),
            fault_angle_deg: 0.0,
            subtransmission_source_z_pu: Complex::new(0.0, 0.10),
            zero_seq_scale: 1.0,
            dt_ms: 0.5,
            t_end_ms: 600.0,
        }
    }

    /// Severe fault archetype: deep sag, contactors trip.
    pub fn severe() -> Self {
        Self::base("s1", 0.024)
    }

    /// Moderately severe archetype: sag inside the chatter band.
    pub fn moderate() -> Self {
        Self::base("s2", 0.075)
    }

    /// Mild archetype: sag stays above every protection threshold.
    pub fn mild() -> Self {
        Self::base("s3", 0.30)
    }

    pub fn builtin(label: &str) -> Option<Self> {
        match label {
            "s1" | "severe" => Some(Self::severe()),
            "s2" | "moderate" => Some(Self::moderate()),
            "s3" | "mild" => Some(Self::mild()),
            _ => None,
        }
    }
}

/// Undervoltage contactor thresholds and timers. The dropout band trips the
/// device outright; the band between dropout and chatter-high produces
/// cyclic trip/reconnect behaviour.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactorParams {
    pub v_dropout: f64,
    pub v_chatter_high: f64,
    pub v_reconnect: f64,
    pub dropout_delay_ms: f64,
    pub reconnect_delay_ms: f64,
    pub chatter_period_ms: f64,
    pub chatter_duty: f64,
}

impl Default for ContactorParams {
    fn default() -> Self {
        Self {
            v_dropout: 0.43,
            v_chatter_high: 0.58,
            v_reconnect: 0.60,
            dropout_delay_ms: 10.0,
            reconnect_delay_ms: 40.0,
            chatter_period_ms: 20.0,
            chatter_duty: 0.5,
        }
    }
}

/// Aggregate single-phase induction motor parameters for one segment/phase.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SphimParams {
    pub v_stall: f64,
    pub stall_exposure_ms: f64,
    /// Locked-rotor apparent power at nominal voltage as a multiple of the
    /// running draw.
    pub locked_rotor_multiple: f64,
    pub locked_rotor_x_over_r: f64,
    /// Running active power scales with |V|^p; reactive with |V|^q.
    pub running_p_exponent: f64,
    pub running_q_exponent: f64,
    pub speed_tau_up_ms: f64,
    pub speed_tau_coast_ms: f64,
}

impl Default for SphimParams {
    fn default() -> Self {
        Self {
            v_stall: 0.55,
            stall_exposure_ms: 5.0,
            locked_rotor_multiple: 7.0,
            locked_rotor_x_over_r: 5.0,
            running_p_exponent: 0.0,
            running_q_exponent: 2.0,
            speed_tau_up_ms: 50.0,
            speed_tau_coast_ms: 80.0,
        }
    }
}

/// Full device and network parameter set for one simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationParams {
    pub contactor: [ContactorParams; 3],
    pub sphim: [SphimParams; 3],
    /// Substation transformer impedance between the subtransmission bus and
    /// the feeder head, per-unit.
    pub transformer_z_pu: Complex,
    /// Distribution transformer reactance inside each segment, per-unit on
    /// the segment load base.
    pub dist_transformer_x_pu: f64,
    pub three_phase_motor_pf: f64,
    /// Constant-power loads turn constant-impedance below this voltage.
    pub low_voltage_floor_pu: f64,
    pub network_tol_pu: f64,
    pub network_max_iter: usize,
}

impl Default for SimulationParams {
    fn default() -> Self {
        // Stall thresholds step down along the feeder: the far segment's
        // motor fleet rides through deeper sags, which is what lets a deep
        // in-band sag stall the near segments while the far one is either
        // tripped clear or rides through.
        let v_stall = [0.54, 0.51, 0.40];
        let sphim = [0usize, 1, 2].map(|k| SphimParams {
            v_stall: v_stall[k],
            ..SphimParams::default()
        });
        Self {
            contactor: [ContactorParams::default(); 3],
            sphim,
            transformer_z_pu: Complex::new(0.006, 0.11),
            dist_transformer_x_pu: 0.02,
            three_phase_motor_pf: 0.90,
            low_voltage_floor_pu: 0.40,
            network_tol_pu: 1e-6,
            network_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactorMode {
    Closed,
    Open,
    Chattering,
}

/// Per-device contactor state machine. Transitions happen only in
/// [`ContactorState::step`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContactorState {
    pub mode: ContactorMode,
    pub segment: usize,
    pub phase: usize,
    params: ContactorParams,
    below_dropout_since: Option<f64>,
    in_chatter_band_since: Option<f64>,
    above_reconnect_since: Option<f64>,
    chatter_started_ms: f64,
}

impl ContactorState {
    pub fn new(segment: usize, phase: usize, params: ContactorParams) -> Self {
        Self {
            mode: ContactorMode::Closed,
            segment,
            phase,
            params,
            below_dropout_since: None,
            in_chatter_band_since: None,
            above_reconnect_since: None,
            chatter_started_ms: 0.0,
        }
    }

    /// Whether the contactor passes current at time `t`; chattering toggles
    /// with the configured period and duty, starting disconnected.
    pub fn conducting(&self, t_ms: f64) -> bool {
        match self.mode {
            ContactorMode::Closed => true,
            ContactorMode::Open => false,
            ContactorMode::Chattering => {
                let phase = (t_ms - self.chatter_started_ms).rem_euclid(self.params.chatter_period_ms);
                phase >= self.params.chatter_period_ms * self.params.chatter_duty
            }
        }
    }

    /// Advance the state machine given the terminal voltage magnitude at
    /// time `t`.
    pub fn step(&mut self, v_terminal: f64, t_ms: f64) {
        let p = self.params;
        match self.mode {
            ContactorMode::Closed => {
                if v_terminal < p.v_dropout {
                    self.in_chatter_band_since = None;
                    let since = *self.below_dropout_since.get_or_insert(t_ms);
                    if t_ms - since >= p.dropout_delay_ms {
                        self.mode = ContactorMode::Open;
                        self.reset_timers();
                    }
                } else if v_terminal < p.v_chatter_high {
                    self.below_dropout_since = None;
                    let since = *self.in_chatter_band_since.get_or_insert(t_ms);
                    if t_ms - since >= p.dropout_delay_ms {
                        self.mode = ContactorMode::Chattering;
                        self.chatter_started_ms = t_ms;
                        self.reset_timers();
                    }
                } else {
                    self.below_dropout_since = None;
                    self.in_chatter_band_since = None;
                }
            }
            ContactorMode::Open | ContactorMode::Chattering => {
                if v_terminal >= p.v_reconnect {
                    let since = *self.above_reconnect_since.get_or_insert(t_ms);
                    if t_ms - since >= p.reconnect_delay_ms {
                        self.mode = ContactorMode::Closed;
                        self.reset_timers();
                    }
                } else {
                    self.above_reconnect_since = None;
                }
            }
        }
    }

    fn reset_timers(&mut self) {
        self.below_dropout_since = None;
        self.in_chatter_band_since = None;
        self.above_reconnect_since = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphimMode {
    Running,
    Stalled,
    Disconnected,
}

/// Aggregate single-phase induction motor for one segment/phase. Stalling is
/// absorbing while energized; a stalled motor that is disconnected
/// re-enters the stall on reconnection (the rotor stays locked), and a
/// healthy motor reconnected below the stall threshold fails to restart.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SphimState {
    pub mode: SphimMode,
    /// Reporting-only speed: 1 running, 0 stalled.
    pub speed: f64,
    pub segment: usize,
    pub phase: usize,
    params: SphimParams,
    /// Rated running apparent power, per-unit.
    rated_s_pu: f64,
    rated_pf: f64,
    below_stall_since: Option<f64>,
    stalled_memory: bool,
}

impl SphimState {
    pub fn new(
        segment: usize,
        phase: usize,
        rated_s_pu: f64,
        rated_pf: f64,
        params: SphimParams,
    ) -> Self {
        Self {
            mode: SphimMode::Running,
            speed: 1.0,
            segment,
            phase,
            params,
            rated_s_pu,
            rated_pf,
            below_stall_since: None,
            stalled_memory: false,
        }
    }

    fn locked_rotor_admittance(&self) -> Complex {
        // |Z| = 1 / (multiple * S_rated); X/R fixes the angle.
        let mag = self.params.locked_rotor_multiple * self.rated_s_pu;
        let xr = self.params.locked_rotor_x_over_r;
        let denom = (1.0 + xr * xr).sqrt();
        // y = 1/Z = mag * (cos - j sin) ... conj handled at use site via S.
        Complex::new(mag / denom, -mag * xr / denom)
    }

    fn running_power(&self, v_mag: f64, floor: f64) -> Complex {
        let p0 = self.rated_s_pu * self.rated_pf;
        let q0 = self.rated_s_pu * (1.0 - self.rated_pf * self.rated_pf).sqrt();
        let p_exp = self.params.running_p_exponent;
        let q_exp = self.params.running_q_exponent;
        let p = if v_mag >= floor {
            p0 * v_mag.powf(p_exp)
        } else {
            // Constant-impedance continuation keeps the fixed point stable.
            p0 * floor.powf(p_exp) * (v_mag / floor).powi(2)
        };
        let q = q0 * v_mag.powf(q_exp);
        Complex::new(p, q)
    }

    /// Complex power drawn at terminal voltage `v`. A reconnecting motor
    /// draws running power unless its rotor is already locked.
    pub fn drawn_power_pu(&self, v: Complex, conducting: bool, floor: f64) -> Complex {
        if !conducting {
            return Complex::new(0.0, 0.0);
        }
        let stalled = matches!(self.mode, SphimMode::Stalled)
            || (matches!(self.mode, SphimMode::Disconnected) && self.stalled_memory);
        if stalled {
            let y = self.locked_rotor_admittance();
            // S = |V|^2 * conj(y)
            v.norm_sqr() * y.conj()
        } else {
            self.running_power(v.norm(), floor)
        }
    }

    /// Advance stall and speed state given the terminal voltage magnitude.
    pub fn step(&mut self, v_terminal: f64, conducting: bool, t_ms: f64, dt_ms: f64) {
        if !conducting {
            if self.mode == SphimMode::Stalled {
                self.stalled_memory = true;
            }
            self.mode = SphimMode::Disconnected;
            self.below_stall_since = None;
            self.speed *= (-dt_ms / self.params.speed_tau_coast_ms).exp();
            return;
        }
        match self.mode {
            SphimMode::Disconnected => {
                // Reconnection: locked rotors stay locked; a healthy motor
                // restarts only above the stall threshold.
                if self.stalled_memory || v_terminal < self.params.v_stall {
                    self.enter_stall();
                } else {
                    self.mode = SphimMode::Running;
                    self.below_stall_since = None;
                }
            }
            SphimMode::Running => {
                if v_terminal < self.params.v_stall {
                    let since = *self.below_stall_since.get_or_insert(t_ms);
                    if t_ms - since >= self.params.stall_exposure_ms {
                        self.enter_stall();
                    }
                } else {
                    self.below_stall_since = None;
                }
            }
            SphimMode::Stalled => {}
        }
        match self.mode {
            SphimMode::Running => {
                self.speed += (1.0 - self.speed) * (dt_ms / self.params.speed_tau_up_ms);
            }
            SphimMode::Stalled => self.speed = 0.0,
            SphimMode::Disconnected => unreachable!("handled above"),
        }
    }

    fn enter_stall(&mut self) {
        self.mode = SphimMode::Stalled;
        self.stalled_memory = true;
        self.speed = 0.0;
        self.below_stall_since = None;
    }
}

/// Complex ratios of the three phase voltages at the faulted bus to the
/// pre-fault voltage, from the symmetrical-component divider. The faulted
/// phase is depressed; with equal sequence impedances the unfaulted phases
/// hold their pre-fault magnitude.
pub fn fault_phase_ratios(scenario: &ScenarioSpec) -> Result<[Complex; 3], DynamicsError> {
    let zs = scenario.subtransmission_source_z_pu;
    let zf = scenario.fault_impedance_pu;
    match scenario.fault_type {
        FaultType::ThreePhase => {
            let denom = zs + zf;
            if denom.norm() == 0.0 {
                return Err(DynamicsError::ZeroSequenceImpedance);
            }
            let r = zf / denom;
            Ok([r, r, r])
        }
        FaultType::SlgPhaseA => {
            let z0 = zs * scenario.zero_seq_scale;
            let denom = zs + zs + z0 + 3.0 * zf;
            if denom.norm() == 0.0 {
                return Err(DynamicsError::ZeroSequenceImpedance);
            }
            let i1 = 1.0 / denom;
            let v1 = Complex::new(1.0, 0.0) - i1 * zs;
            let v2 = -i1 * zs;
            let v0 = -i1 * z0;
            let a = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
            let a2 = a * a;
            Ok([
                v0 + v1 + v2,
                v0 + a2 * v1 + a * v2,
                v0 + a * v1 + a2 * v2,
            ])
        }
    }
}

/// Per-phase feeder-head voltages during the fault, per-unit, for a given
/// pre-fault head voltage. The substation transformer sits between this bus
/// and the loads, so under load the head sags further than the open-circuit
/// value returned here.
pub fn during_fault_head_voltages(
    scenario: &ScenarioSpec,
    prefault_head_pu: f64,
) -> Result<[Complex; 3], DynamicsError> {
    let ratios = fault_phase_ratios(scenario)?;
    Ok(ratios.map(|r| r * prefault_head_pu))
}

/// One recorded simulation step. Indices are `[segment][phase]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t_ms: f64,
    /// Positive-sequence feeder-head voltage magnitude, pu.
    pub head_v_pos_pu: f64,
    pub head_p_pu: f64,
    pub head_q_pu: f64,
    pub bus_v_pu: [[f64; 3]; 3],
    pub terminal_v_pu: [[f64; 3]; 3],
    pub contactor_mode: [[ContactorMode; 3]; 3],
    pub contactor_conducting: [[bool; 3]; 3],
    pub sphim_mode: [[SphimMode; 3]; 3],
    pub sphim_speed: [[f64; 3]; 3],
}

/// Full simulation trace at a uniform timestep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub model_name: String,
    pub scenario_label: String,
    pub dt_ms: f64,
    pub fault_start_ms: f64,
    pub steps: Vec<StepRecord>,
}

impl TimeSeries {
    pub fn final_step(&self) -> &StepRecord {
        self.steps.last().expect("simulation records at least one step")
    }

    /// Plot-ready CSV: head voltage and powers, per-segment phase-A bus
    /// voltages, contactor conduction signals as 0/1, and motor speeds.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t_ms,head_v_pos_pu,head_p_pu,head_q_pu")?;
        for seg in 0..3 {
            for (p, name) in ["a", "b", "c"].iter().enumerate() {
                let _ = p;
                write!(w, ",v_bus_s{}_{name}", seg + 1)?;
            }
        }
        for seg in 0..3 {
            for name in ["a", "b", "c"] {
                write!(w, ",contactor_s{}_{name}", seg + 1)?;
            }
        }
        for seg in 0..3 {
            for name in ["a", "b", "c"] {
                write!(w, ",speed_s{}_{name}", seg + 1)?;
            }
        }
        writeln!(w)?;
        for s in &self.steps {
            write!(
                w,
                "{:.3},{:.6},{:.6},{:.6}",
                s.t_ms, s.head_v_pos_pu, s.head_p_pu, s.head_q_pu
            )?;
            for seg in 0..3 {
                for p in 0..3 {
                    write!(w, ",{:.6}", s.bus_v_pu[seg][p])?;
                }
            }
            for seg in 0..3 {
                for p in 0..3 {
                    write!(w, ",{}", u8::from(s.contactor_conducting[seg][p]))?;
                }
            }
            for seg in 0..3 {
                for p in 0..3 {
                    write!(w, ",{:.6}", s.sphim_speed[seg][p])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactorStatus {
    Trips,
    Chatters,
    NoAffect,
}

impl std::fmt::Display for ContactorStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContactorStatus::Trips => write!(f, "Trips"),
            ContactorStatus::Chatters => write!(f, "Chatters"),
            ContactorStatus::NoAffect => write!(f, "No affect"),
        }
    }
}

/// Event descriptors extracted from one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub st: ContactorStatus,
    pub t1_ms: Option<f64>,
    pub v1_pu: Option<f64>,
    pub t2_ms: Option<f64>,
    pub v2_pu: Option<f64>,
    pub tms: u8,
    pub ims: [u8; 3],
}

/// Derive the event metrics from a trace: status from the contactor mode
/// history (any full trip outranks chattering), T1/V1 at the first
/// disconnect, T2/V2 at the first reconnection, stall counts from the final
/// motor modes.
pub fn extract_metrics(ts: &TimeSeries, fault_start_ms: f64) -> EventMetrics {
    let mut any_open = false;
    let mut any_chatter = false;
    let mut t1 = None;
    let mut v1 = None;
    let mut t2 = None;
    let mut v2 = None;
    let mut left_closed = [[false; 3]; 3];
    for s in &ts.steps {
        for seg in 0..3 {
            for p in 0..3 {
                match s.contactor_mode[seg][p] {
                    ContactorMode::Closed => {
                        if left_closed[seg][p] && t2.is_none() {
                            t2 = Some(s.t_ms - fault_start_ms);
                            v2 = Some(s.head_v_pos_pu);
                        }
                    }
                    ContactorMode::Open => {
                        any_open = true;
                        left_closed[seg][p] = true;
                        if t1.is_none() {
                            t1 = Some(s.t_ms - fault_start_ms);
                            v1 = Some(s.head_v_pos_pu);
                        }
                    }
                    ContactorMode::Chattering => {
                        any_chatter = true;
                        left_closed[seg][p] = true;
                        if t1.is_none() {
                            t1 = Some(s.t_ms - fault_start_ms);
                            v1 = Some(s.head_v_pos_pu);
                        }
                    }
                }
            }
        }
    }
    let st = if any_open {
        ContactorStatus::Trips
    } else if any_chatter {
        ContactorStatus::Chatters
    } else {
        ContactorStatus::NoAffect
    };
    let last = ts.final_step();
    let mut ims = [0u8; 3];
    for seg in 0..3 {
        if (0..3).any(|p| last.sphim_mode[seg][p] == SphimMode::Stalled) {
            ims[seg] = 1;
        }
    }
    let tms = ims.iter().sum();
    EventMetrics {
        st,
        t1_ms: t1,
        v1_pu: v1,
        t2_ms: t2,
        v2_pu: v2,
        tms,
        ims,
    }
}

struct PhaseNetwork {
    /// Thevenin source behind `z_up` feeding the head bus.
    e_source: Complex,
    z_up: Complex,
    z_seg: [Complex; 3],
    z_dxf: [Complex; 3],
    /// Head capacitor susceptance, pu.
    cap_b: f64,
    /// Static per-segment loads: three-phase motor PQ and resistive P.
    s_motor3: [Complex; 3],
    p_resistive: [f64; 3],
}

struct PhaseSolution {
    bus: [Complex; 4],
    terminal: [Complex; 3],
    head_current: Complex,
}

fn static_load_power(
    s_motor3: Complex,
    p_res: f64,
    v: Complex,
    floor: f64,
) -> Complex {
    let vm = v.norm();
    let motor = if vm >= floor {
        s_motor3
    } else {
        s_motor3 * (vm / floor).powi(2)
    };
    let resistive = Complex::new(p_res * vm * vm, 0.0);
    motor + resistive
}

impl PhaseNetwork {
    /// Fixed-point solve of the series chain for the present device states.
    /// `sphims[k]` is the segment-k motor on this phase.
    fn solve(
        &self,
        sphims: &[SphimState; 3],
        conducting: [bool; 3],
        floor: f64,
        tol: f64,
        max_iter: usize,
        start: &[Complex; 4],
    ) -> Option<PhaseSolution> {
        let mut v = *start;
        for _ in 0..max_iter {
            let mut seg_current = [Complex::new(0.0, 0.0); 3];
            let mut terminal = [Complex::new(0.0, 0.0); 3];
            for k in 0..3 {
                // Terminal voltage behind the distribution transformer.
                let mut v_t = v[k + 1];
                let mut i_k = Complex::new(0.0, 0.0);
                for _ in 0..8 {
                    let s = static_load_power(
                        self.s_motor3[k],
                        self.p_resistive[k],
                        v_t,
                        floor,
                    ) + sphims[k].drawn_power_pu(v_t, conducting[k], floor);
                    i_k = if v_t.norm() < 1e-9 {
                        Complex::new(0.0, 0.0)
                    } else {
                        (s / v_t).conj()
                    };
                    let next = v[k + 1] - self.z_dxf[k] * i_k;
                    if (next - v_t).norm() < tol * 0.1 {
                        v_t = next;
                        break;
                    }
                    v_t = next;
                }
                terminal[k] = v_t;
                seg_current[k] = i_k;
            }
            let i3 = seg_current[2];
            let i2 = seg_current[1] + i3;
            let i1 = seg_current[0] + i2;
            let i_cap = v[0] * Complex::new(0.0, self.cap_b);
            let i_head = i1 + i_cap;
            let n0 = self.e_source - self.z_up * i_head;
            let n1 = n0 - self.z_seg[0] * i1;
            let n2 = n1 - self.z_seg[1] * i2;
            let n3 = n2 - self.z_seg[2] * i3;
            let mismatch = (n0 - v[0])
                .norm()
                .max((n1 - v[1]).norm())
                .max((n2 - v[2]).norm())
                .max((n3 - v[3]).norm());
            v = [n0, n1, n2, n3];
            if mismatch < tol {
                return Some(PhaseSolution {
                    bus: v,
                    terminal,
                    head_current: i_head,
                });
            }
        }
        None
    }
}

/// Positive-sequence component of three phase voltages expressed in their
/// own per-phase reference frames (the b/c rotations cancel against the
/// sequence operator, leaving the plain average).
fn positive_sequence(v: [Complex; 3]) -> Complex {
    (v[0] + v[1] + v[2]) / 3.0
}

/// Divider ratios rebased into each phase's own reference frame, so a
/// balanced condition maps to three identical ratios of 1.
fn own_frame_ratios(ratios: [Complex; 3]) -> [Complex; 3] {
    let a = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    [ratios[0], ratios[1] / (a * a), ratios[2] / a]
}

/// Simulate one scenario. Per timestep: apply during/post-fault source
/// voltages, fixed-point solve each phase's segment chain against the
/// present contactor and motor states, then advance the state machines with
/// their terminal voltages. Fully deterministic.
pub fn simulate_scenario(
    model: &ReducedFeederModel,
    scenario: &ScenarioSpec,
    params: &SimulationParams,
) -> Result<TimeSeries, DynamicsError> {
    model
        .validate()
        .map_err(DynamicsError::InvalidModel)?;
    scenario.validate()?;
    let bases = PerUnitBases::default();
    let floor = params.low_voltage_floor_pu;

    // Per-segment per-phase rated loads, pu. In the per-phase balanced
    // equivalent the per-phase pu value equals the three-phase pu value.
    let seg_pu: Vec<Complex> = (0..3)
        .map(|k| bases.power_to_pu(model.segment_load_mva(k)))
        .collect();
    let comp = |k: usize| model.segments[k].composition;
    let mut sphims: Vec<[SphimState; 3]> = Vec::new(); // [phase][segment]
    for p in 0..3 {
        let mk = |k: usize| {
            let share = comp(k).sphim;
            let s = seg_pu[k].norm() * share;
            SphimState::new(k, p, s, model.load_power_factor, params.sphim[k])
        };
        sphims.push([mk(0), mk(1), mk(2)]);
    }
    let mut contactors: Vec<[ContactorState; 3]> = (0..3)
        .map(|p| {
            [
                ContactorState::new(0, p, params.contactor[0]),
                ContactorState::new(1, p, params.contactor[1]),
                ContactorState::new(2, p, params.contactor[2]),
            ]
        })
        .collect();

    let pf_m = params.three_phase_motor_pf.clamp(0.0, 1.0);
    let q_m = (1.0 - pf_m * pf_m).sqrt();
    let s_motor3: [Complex; 3] = [0, 1, 2].map(|k| {
        let s = seg_pu[k].norm() * comp(k).three_phase_motor;
        Complex::new(s * pf_m, s * q_m)
    });
    let p_resistive: [f64; 3] = [0, 1, 2].map(|k| seg_pu[k].norm() * comp(k).resistive);
    let z_seg: [Complex; 3] = [0, 1, 2].map(|k| model.segments[k].series_impedance_pu());
    let z_dxf: [Complex; 3] = [0, 1, 2].map(|k| {
        let s = seg_pu[k].norm().max(1e-9);
        Complex::new(0.0, params.dist_transformer_x_pu / s)
    });
    let z_up = scenario.subtransmission_source_z_pu + params.transformer_z_pu;

    // Pre-fault initializationerialize: hold the head at its setpoint, size the
    // capacitor to cancel the head reactive draw, then back-compute the
    // source voltage that sustains the operating point behind z_up.
    let head = Complex::new(model.head_voltage_pu, 0.0);
    let stiff = PhaseNetwork {
        e_source: head,
        z_up: Complex::new(0.0, 0.0),
        z_seg,
        z_dxf,
        cap_b: 0.0,
        s_motor3,
        p_resistive,
    };
    let start0 = [head; 4];
    let pre = stiff
        .solve(
            &sphims[0],
            [true; 3],
            floor,
            params.network_tol_pu * 1e-3,
            params.network_max_iter * 4,
            &start0,
        )
        .ok_or(DynamicsError::NetworkDiverged { step: 0, phase: 0 })?;
    let head_s = pre.bus[0] * pre.head_current.conj();
    let cap_b = head_s.im / model.head_voltage_pu.powi(2);
    let i_with_cap = pre.head_current + pre.bus[0] * Complex::new(0.0, cap_b);
    let e_nominal = head + z_up * i_with_cap;

    let ratios = own_frame_ratios(fault_phase_ratios(scenario)?);
    let n_steps = (scenario.t_end_ms / scenario.dt_ms).round() as usize;
    let mut steps = Vec::with_capacity(n_steps + 1);
    let mut warm: [[Complex; 4]; 3] = [[head; 4]; 3];

    for step in 0..=n_steps {
        let t = step as f64 * scenario.dt_ms;
        let in_fault = t >= scenario.fault_start_ms
            && t < scenario.fault_start_ms + scenario.fault_duration_ms;

        let mut bus_v = [[0.0; 3]; 3];
        let mut term_v = [[0.0; 3]; 3];
        let mut head_v = [Complex::new(0.0, 0.0); 3];
        let mut head_s_total = Complex::new(0.0, 0.0);
        let mut conducting = [[false; 3]; 3];
        let mut terminals = [[0.0f64; 3]; 3]; // [phase][segment]

        for p in 0..3 {
            let e = if in_fault {
                e_nominal * ratios[p]
            } else {
                e_nominal
            };
            let net = PhaseNetwork {
                e_source: e,
                z_up,
                z_seg,
                z_dxf,
                cap_b,
                s_motor3,
                p_resistive,
            };
            let cond = [
                contactors[p][0].conducting(t),
                contactors[p][1].conducting(t),
                contactors[p][2].conducting(t),
            ];
            let sol = net
                .solve(
                    &sphims[p],
                    cond,
                    floor,
                    params.network_tol_pu,
                    params.network_max_iter,
                    &warm[p],
                )
                .ok_or(DynamicsError::NetworkDiverged { step, phase: p })?;
            warm[p] = sol.bus;
            head_v[p] = sol.bus[0];
            head_s_total += sol.bus[0] * sol.head_current.conj();
            for k in 0..3 {
                bus_v[k][p] = sol.bus[k + 1].norm();
                term_v[k][p] = sol.terminal[k].norm();
                conducting[k][p] = cond[k];
                terminals[p][k] = sol.terminal[k].norm();
            }
        }

        let head_pos = positive_sequence(head_v).norm();
        let head_s_avg = head_s_total / 3.0;
        let record = StepRecord {
            t_ms: t,
            head_v_pos_pu: head_pos,
            head_p_pu: head_s_avg.re,
            head_q_pu: head_s_avg.im,
            bus_v_pu: bus_v,
            terminal_v_pu: term_v,
            contactor_mode: {
                let mut m = [[ContactorMode::Closed; 3]; 3];
                for k in 0..3 {
                    for p in 0..3 {
                        m[k][p] = contactors[p][k].mode;
                    }
                }
                m
            },
            contactor_conducting: conducting,
            sphim_mode: {
                let mut m = [[SphimMode::Running; 3]; 3];
                for k in 0..3 {
                    for p in 0..3 {
                        m[k][p] = sphims[p][k].mode;
                    }
                }
                m
            },
            sphim_speed: {
                let mut m = [[0.0; 3]; 3];
                for k in 0..3 {
                    for p in 0..3 {
                        m[k][p] = sphims[p][k].speed;
                    }
                }
                m
            },
        };
        steps.push(record);

        // Advance state machines off the solved terminal voltages.
        for p in 0..3 {
            for k in 0..3 {
                let cond = conducting[k][p];
                sphims[p][k].step(terminals[p][k], cond, t, scenario.dt_ms);
            }
            for k in 0..3 {
                contactors[p][k].step(terminals[p][k], t);
            }
        }
    }

    Ok(TimeSeries {
        model_name: model.name.clone(),
        scenario_label: scenario.label.clone(),
        dt_ms: scenario.dt_ms,
        fault_start_ms: scenario.fault_start_ms,
        steps,
    })
}

/// One cell of a scenario sweep; failures are recorded, not propagated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub scenario: String,
    pub metrics: Option<EventMetrics>,
    pub error: Option<String>,
}

/// Run every scenario in the grid independently, in grid order.
pub fn scenario_sweep(
    model: &ReducedFeederModel,
    grid: &[ScenarioSpec],
    params: &SimulationParams,
) -> Result<Vec<SweepCell>, DynamicsError> {
    if grid.is_empty() {
        return Err(DynamicsError::EmptyGrid);
    }
    Ok(grid
        .iter()
        .map(|scenario| match simulate_scenario(model, scenario, params) {
            Ok(ts) => SweepCell {
                scenario: scenario.label.clone(),
                metrics: Some(extract_metrics(&ts, scenario.fault_start_ms)),
                error: None,
            },
            Err(e) => SweepCell {
                scenario: scenario.label.clone(),
                metrics: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
