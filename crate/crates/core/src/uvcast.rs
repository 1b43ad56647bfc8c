//! Per-vehicle UV-CAST state machine with the density-adaptive `p` and `s`
//! suppression mechanisms.
//!
//! A vehicle tracks a smoothed neighbour count `k_med` from beacons. Receivers
//! of a warning message wait for a distance-dependent time and rebroadcast
//! unless they hear a duplicate first. Vehicles in sparse neighbourhoods, or
//! vehicles that never hear an echo of their own reception, become
//! store-carry-forward agents and retransmit whenever a new neighbour appears.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scenario::{NodeId, Point};

pub type MessageId = u32;

/// Axis-aligned square region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x_min: f64,
    pub y_min: f64,
    pub side_m: f64,
}

impl Roi {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min
            && p.x <= self.x_min + self.side_m
            && p.y >= self.y_min
            && p.y <= self.y_min + self.side_m
    }

    pub fn center(&self) -> Point {
        Point::new(self.x_min + self.side_m / 2.0, self.y_min + self.side_m / 2.0)
    }
}

impl Default for Roi {
    fn default() -> Self {
        Roi {
            x_min: 0.0,
            y_min: 0.0,
            side_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub beacon_interval_s: f64,
    pub ema_alpha: f64,
    pub k_low: f64,
    pub k_high: f64,
    pub t_max_wait_s: f64,
    pub intersection_factor: f64,
    /// `R` of the wait-time slot, normally the line-of-sight range.
    pub relay_range_m: f64,
    pub enable_p: bool,
    pub enable_s: bool,
    pub roi: Roi,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            beacon_interval_s: 1.0,
            ema_alpha: 0.1,
            k_low: 3.0,
            k_high: 4.0,
            t_max_wait_s: 0.5,
            intersection_factor: 0.5,
            relay_range_m: 250.0,
            enable_p: false,
            enable_s: false,
            roi: Roi::default(),
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.beacon_interval_s > 0.0) {
            return bad("beacon_interval_s must be positive");
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return bad("ema_alpha must lie in (0, 1]");
        }
        if !(self.k_low <= self.k_high) {
            return bad("k_low must not exceed k_high");
        }
        if !(self.t_max_wait_s > 0.0) {
            return bad("t_max_wait_s must be positive");
        }
        if !(self.intersection_factor > 0.0 && self.intersection_factor <= 1.0) {
            return bad("intersection_factor must lie in (0, 1]");
        }
        if !(self.relay_range_m > 0.0) || !(self.roi.side_m > 0.0) {
            return bad("relay range and roi side must be positive");
        }
        Ok(())
    }

    pub fn with_mechanisms(mut self, enable_p: bool, enable_s: bool) -> Self {
        self.enable_p = enable_p;
        self.enable_s = enable_s;
        self
    }
}

/// Rebroadcast-survival complement: a duplicate-hit timer survives with
/// probability `1 - s`.
pub fn s_value(k_med: f64) -> Result<f64> {
    if !(k_med >= 0.0) {
        return Err(Error::Domain(format!("k_med {k_med} is negative")));
    }
    Ok(if k_med < 3.0 { 0.5 + 0.5 * k_med / 3.0 } else { 1.0 })
}

/// Rebroadcast and agent-assignment probability in dense neighbourhoods.
pub fn p_value(k_med: f64) -> Result<f64> {
    if !(k_med >= 0.0) {
        return Err(Error::Domain(format!("k_med {k_med} is negative")));
    }
    Ok(if k_med > 4.0 { 0.5 + 0.5 / (k_med - 4.0 + 1.0) } else { 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Disconnected,
    Intermediate,
    WellConnected,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Disconnected => "disconnected",
            Regime::Intermediate => "intermediate",
            Regime::WellConnected => "well_connected",
        })
    }
}

pub fn regime_of(k_med: f64, params: &ProtocolParams) -> Regime {
    if k_med < params.k_low {
        Regime::Disconnected
    } else if k_med > params.k_high {
        Regime::WellConnected
    } else {
        Regime::Intermediate
    }
}

pub fn wait_time(dist_to_relay_m: f64, at_intersection: bool, params: &ProtocolParams) -> f64 {
    let r = params.relay_range_m;
    let w = params.t_max_wait_s * (1.0 - dist_to_relay_m.clamp(0.0, r) / r);
    if at_intersection {
        w * params.intersection_factor
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarningMessage {
    pub id: MessageId,
    pub origin_pos: Point,
    pub relay_pos: Point,
    pub hop_count: u32,
    pub created_s: f64,
}

impl WarningMessage {
    pub fn new(id: MessageId, origin_pos: Point, created_s: f64) -> Self {
        WarningMessage {
            id,
            origin_pos,
            relay_pos: origin_pos,
            hop_count: 0,
            created_s,
        }
    }

    pub fn relayed_from(&self, pos: Point) -> Self {
        WarningMessage {
            relay_pos: pos,
            hop_count: self.hop_count + 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraceKind {
    Rx,
    Tx,
    TimerSet,
    TimerCancel,
    ScfOn,
    ScfTx,
    SuppressP,
    SuppressS,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::Rx => "rx",
            TraceKind::Tx => "tx",
            TraceKind::TimerSet => "timer_set",
            TraceKind::TimerCancel => "timer_cancel",
            TraceKind::ScfOn => "scf_on",
            TraceKind::ScfTx => "scf_tx",
            TraceKind::SuppressP => "suppress_p",
            TraceKind::SuppressS => "suppress_s",
        })
    }
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rx" => TraceKind::Rx,
            "tx" => TraceKind::Tx,
            "timer_set" => TraceKind::TimerSet,
            "timer_cancel" => TraceKind::TimerCancel,
            "scf_on" => TraceKind::ScfOn,
            "scf_tx" => TraceKind::ScfTx,
            "suppress_p" => TraceKind::SuppressP,
            "suppress_s" => TraceKind::SuppressS,
            _ => return Err(Error::Parse(format!("trace event {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time_s: f64,
    pub vehicle: NodeId,
    pub kind: TraceKind,
    pub msg_id: MessageId,
    pub k_med: f64,
}

pub const TRACE_CSV_HEADER: &str = "time_s,vehicle,event,msg_id,k_med";

pub fn write_trace<W: Write>(trace: &[TraceEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER.split(','))?;
    for e in trace {
        w.write_record([
            format!("{:.6}", e.time_s),
            e.vehicle.to_string(),
            e.kind.to_string(),
            e.msg_id.to_string(),
            format!("{:.6}", e.k_med),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Where and when a protocol operation happens.
#[derive(Debug)]
pub struct Ctx<'a> {
    pub now: f64,
    pub vehicle: NodeId,
    pub pos: Point,
    pub at_intersection: bool,
    pub trace: &'a mut Vec<TraceEvent>,
}

/// Follow-up work the engine must schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Timer { msg_id: MessageId, at: f64 },
    EchoCheck { msg_id: MessageId, at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub first_rx_time: f64,
    pub first_rx_pos: Point,
    pub relay_pos: Point,
    pub duplicate_count: u32,
    pub message: WarningMessage,
    pub originated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingTimer {
    pub expiry: f64,
    /// Outcome of the survival draw, made at the first duplicate.
    pub survives: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicleProtocolState {
    pub k_med: f64,
    pub k_med_initialized: bool,
    pub neighbor_table: BTreeMap<NodeId, f64>,
    pub received: BTreeMap<MessageId, Reception>,
    pub pending_timers: BTreeMap<MessageId, PendingTimer>,
    pub scf_carrying: BTreeSet<MessageId>,
    pub tx_count: u32,
    pub rx_count: u32,
}

impl VehicleProtocolState {
    pub fn new() -> Self {
        Self::default()
    }

    fn log(&self, ctx: &mut Ctx<'_>, kind: TraceKind, msg_id: MessageId) {
        ctx.trace.push(TraceEvent {
            time_s: ctx.now,
            vehicle: ctx.vehicle,
            kind,
            msg_id,
            k_med: self.k_med,
        });
    }

    pub fn update_k_med(&mut self, observed: usize, params: &ProtocolParams) {
        let observed = observed as f64;
        if self.k_med_initialized {
            self.k_med = (1.0 - params.ema_alpha) * self.k_med + params.ema_alpha * observed;
        } else {
            self.k_med = observed;
            self.k_med_initialized = true;
        }
    }

    pub fn regime(&self, params: &ProtocolParams) -> Regime {
        regime_of(self.k_med, params)
    }

    /// Own beacon epoch: fold the number of neighbours heard within the last
    /// two beacon intervals into `k_med`.
    pub fn on_beacon_epoch(&mut self, now: f64, params: &ProtocolParams) {
        let horizon = 2.0 * params.beacon_interval_s;
        let fresh = self.neighbor_table.values().filter(|&&t| now - t < horizon).count();
        self.update_k_med(fresh, params);
    }

    /// A beacon from `sender` was heard. A sender without a live table entry
    /// (heard within two beacon intervals) is a new neighbour;
    /// store-carry-forward agents retransmit every carried message to it.
    pub fn on_beacon_heard(
        &mut self,
        sender: NodeId,
        in_roi: bool,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
    ) -> Vec<WarningMessage> {
        let horizon = 2.0 * params.beacon_interval_s;
        let is_new = self
            .neighbor_table
            .insert(sender, ctx.now)
            .map_or(true, |t| ctx.now - t >= horizon);
        if !is_new || !in_roi {
            return Vec::new();
        }
        let carried: Vec<MessageId> = self.scf_carrying.iter().copied().collect();
        carried
            .into_iter()
            .map(|id| {
                self.tx_count += 1;
                self.log(ctx, TraceKind::ScfTx, id);
                self.received[&id].message.relayed_from(ctx.pos)
            })
            .collect()
    }

    /// The source creates `msg` and transmits it once.
    pub fn originate<R: Rng + ?Sized>(
        &mut self,
        msg: WarningMessage,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
    ) -> Vec<Action> {
        self.received.insert(
            msg.id,
            Reception {
                first_rx_time: ctx.now,
                first_rx_pos: ctx.pos,
                relay_pos: msg.relay_pos,
                duplicate_count: 0,
                message: msg,
                originated: true,
            },
        );
        self.tx_count += 1;
        self.log(ctx, TraceKind::Tx, msg.id);
        self.after_first_contact(msg.id, ctx, params, rng, Vec::new())
    }

    fn after_first_contact<R: Rng + ?Sized>(
        &mut self,
        msg_id: MessageId,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
        mut actions: Vec<Action>,
    ) -> Vec<Action> {
        if self.regime(params) == Regime::Disconnected {
            self.scf_assign(msg_id, ctx, params, rng);
        } else {
            actions.push(Action::EchoCheck {
                msg_id,
                at: ctx.now + 2.0 * params.t_max_wait_s,
            });
        }
        actions
    }

    pub fn on_receive<R: Rng + ?Sized>(
        &mut self,
        msg: &WarningMessage,
        in_roi: bool,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
    ) -> Vec<Action> {
        if !in_roi {
            return Vec::new();
        }
        self.rx_count += 1;
        self.log(ctx, TraceKind::Rx, msg.id);
        if let Some(rec) = self.received.get_mut(&msg.id) {
            rec.duplicate_count += 1;
            self.on_duplicate(msg.id, ctx, params, rng);
            return Vec::new();
        }
        self.received.insert(
            msg.id,
            Reception {
                first_rx_time: ctx.now,
                first_rx_pos: ctx.pos,
                relay_pos: msg.relay_pos,
                duplicate_count: 0,
                message: *msg,
                originated: false,
            },
        );
        let at = ctx.now + wait_time(ctx.pos.dist(&msg.relay_pos), ctx.at_intersection, params);
        self.pending_timers.insert(
            msg.id,
            PendingTimer {
                expiry: at,
                survives: None,
            },
        );
        self.log(ctx, TraceKind::TimerSet, msg.id);
        self.after_first_contact(msg.id, ctx, params, rng, vec![Action::Timer { msg_id: msg.id, at }])
    }

    fn on_duplicate<R: Rng + ?Sized>(
        &mut self,
        msg_id: MessageId,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
    ) {
        let Some(timer) = self.pending_timers.get_mut(&msg_id) else {
            return;
        };
        if params.enable_s && self.k_med < params.k_low {
            let k_med = self.k_med;
            let survives = *timer.survives.get_or_insert_with(|| {
                let s = s_value(k_med).unwrap_or(1.0);
                rng.gen::<f64>() < 1.0 - s
            });
            if !survives {
                self.pending_timers.remove(&msg_id);
                self.log(ctx, TraceKind::SuppressS, msg_id);
            }
        } else if timer.survives != Some(true) {
            self.pending_timers.remove(&msg_id);
            self.log(ctx, TraceKind::TimerCancel, msg_id);
        }
    }

    /// Returns the relayed message when the vehicle transmits.
    pub fn on_timer_expiry<R: Rng + ?Sized>(
        &mut self,
        msg_id: MessageId,
        in_roi: bool,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
    ) -> Option<WarningMessage> {
        self.pending_timers.remove(&msg_id)?;
        if !in_roi {
            return None;
        }
        if params.enable_p && self.k_med > params.k_high {
            let p = p_value(self.k_med).unwrap_or(1.0);
            if rng.gen::<f64>() >= p {
                self.log(ctx, TraceKind::SuppressP, msg_id);
                return None;
            }
        }
        self.tx_count += 1;
        self.log(ctx, TraceKind::Tx, msg_id);
        Some(self.received[&msg_id].message.relayed_from(ctx.pos))
    }

    /// Echo check `2 t_max` after first contact: a vehicle that heard no
    /// rebroadcast sits at a network boundary and carries the message.
    pub fn on_echo_check<R: Rng + ?Sized>(
        &mut self,
        msg_id: MessageId,
        in_roi: bool,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
    ) -> bool {
        let heard_echo = self.received.get(&msg_id).map_or(true, |r| r.duplicate_count > 0);
        if heard_echo || !in_roi || self.scf_carrying.contains(&msg_id) {
            return false;
        }
        self.scf_assign(msg_id, ctx, params, rng)
    }

    pub fn scf_assign<R: Rng + ?Sized>(
        &mut self,
        msg_id: MessageId,
        ctx: &mut Ctx<'_>,
        params: &ProtocolParams,
        rng: &mut R,
    ) -> bool {
        if !self.received.contains_key(&msg_id) || self.scf_carrying.contains(&msg_id) {
            return false;
        }
        let prob = if params.enable_p && self.k_med > params.k_high {
            p_value(self.k_med).unwrap_or(1.0)
        } else {
            1.0
        };
        if prob < 1.0 && rng.gen::<f64>() >= prob {
            return false;
        }
        self.scf_carrying.insert(msg_id);
        self.log(ctx, TraceKind::ScfOn, msg_id);
        true
    }
}

/// Mean duplicate count over informed vehicles, recomputed from a trace.
///
/// A vehicle's first `rx` is its informing reception; every later `rx` is a
/// duplicate. A vehicle whose first event is a `tx` originated the message,
/// so all its receptions are duplicates.
pub fn duplicate_statistics(trace: &[TraceEvent]) -> f64 {
    let mut first: BTreeMap<(NodeId, MessageId), TraceKind> = BTreeMap::new();
    let mut rx: BTreeMap<(NodeId, MessageId), u64> = BTreeMap::new();
    for e in trace {
        if matches!(e.kind, TraceKind::Rx | TraceKind::Tx) {
            first.entry((e.vehicle, e.msg_id)).or_insert(e.kind);
        }
        if e.kind == TraceKind::Rx {
            *rx.entry((e.vehicle, e.msg_id)).or_default() += 1;
        }
    }
    if first.is_empty() {
        return 0.0;
    }
    let total: u64 = first
        .iter()
        .map(|(key, kind)| {
            let n = rx.get(key).copied().unwrap_or(0);
            if *kind == TraceKind::Rx {
                n - 1
            } else {
                n
            }
        })
        .sum();
    total as f64 / first.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::mock::StepRng;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn ctx<'a>(trace: &'a mut Vec<TraceEvent>, now: f64, pos: Point) -> Ctx<'a> {
        Ctx {
            now,
            vehicle: 7,
            pos,
            at_intersection: false,
            trace,
        }
    }

    fn with_k(k: f64) -> VehicleProtocolState {
        VehicleProtocolState {
            k_med: k,
            k_med_initialized: true,
            ..Default::default()
        }
    }

    /// Rng whose `gen::<f64>()` returns (approximately) `u`.
    fn fixed(u: f64) -> StepRng {
        StepRng::new((u * u64::MAX as f64) as u64, 0)
    }

    fn msg() -> WarningMessage {
        WarningMessage::new(0, Point::new(0.0, 0.0), 0.0)
    }

    #[test]
    fn mechanism_functions() {
        assert_eq!(s_value(0.0).unwrap(), 0.5);
        assert_eq!(s_value(1.5).unwrap(), 0.75);
        assert_eq!(s_value(3.0).unwrap(), 1.0);
        assert_eq!(p_value(4.0).unwrap(), 1.0);
        assert_eq!(p_value(5.0).unwrap(), 0.75);
        assert!((p_value(9.0).unwrap() - (0.5 + 0.5 / 6.0)).abs() < 1e-15);
        assert!((p_value(6.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(s_value(-0.1).is_err());
        assert!(p_value(-1.0).is_err());
        assert!(p_value(f64::NAN).is_err());
    }

    #[test]
    fn ema_and_regimes() {
        let params = ProtocolParams::default();
        let mut st = VehicleProtocolState::new();
        st.update_k_med(4, &params);
        assert_eq!(st.k_med, 4.0);
        let mut st = with_k(2.0);
        st.update_k_med(7, &params);
        assert!((st.k_med - 2.5).abs() < 1e-12);
        let mut prev = st.k_med;
        for _ in 0..500 {
            st.update_k_med(6, &params);
            assert!(st.k_med >= prev && st.k_med <= 6.0);
            prev = st.k_med;
        }
        assert!((st.k_med - 6.0).abs() < 1e-9);
        assert_eq!(regime_of(2.9, &params), Regime::Disconnected);
        assert_eq!(regime_of(4.1, &params), Regime::WellConnected);
        assert_eq!(regime_of(3.5, &params), Regime::Intermediate);
        assert_eq!(regime_of(3.0, &params), Regime::Intermediate);
        assert_eq!(regime_of(4.0, &params), Regime::Intermediate);
    }

    #[test]
    fn wait_times() {
        let p = ProtocolParams::default();
        assert_eq!(wait_time(250.0, false, &p), 0.0);
        assert_eq!(wait_time(250.0, true, &p), 0.0);
        assert_eq!(wait_time(400.0, false, &p), 0.0);
        assert_eq!(wait_time(0.0, false, &p), 0.5);
        assert_eq!(wait_time(125.0, true, &p), 0.125);
    }

    #[test]
    fn beacon_epoch_counts_fresh_entries() {
        let params = ProtocolParams::default();
        let mut st = VehicleProtocolState::new();
        st.neighbor_table.insert(1, 0.0);
        st.neighbor_table.insert(2, 9.5);
        st.neighbor_table.insert(3, 8.0);
        st.on_beacon_epoch(10.0, &params);
        assert_eq!(st.k_med, 1.0);
        assert_eq!(st.neighbor_table.len(), 3);
    }

    #[test]
    fn first_reception_schedules_timer() {
        let params = ProtocolParams::default();
        let mut st = with_k(6.0);
        let mut trace = Vec::new();
        let mut c = ctx(&mut trace, 10.0, Point::new(200.0, 0.0));
        let actions = st.on_receive(&msg(), true, &mut c, &params, &mut fixed(0.0));
        let w = wait_time(200.0, false, &params);
        assert_eq!(actions[0], Action::Timer { msg_id: 0, at: 10.0 + w });
        assert_eq!(actions[1], Action::EchoCheck { msg_id: 0, at: 11.0 });
        assert_eq!(st.pending_timers.len(), 1);
        assert_eq!(st.rx_count, 1);
        let kinds: Vec<_> = trace.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [TraceKind::Rx, TraceKind::TimerSet]);
    }

    #[test]
    fn outside_roi_discards() {
        let params = ProtocolParams::default();
        let mut st = with_k(6.0);
        let mut trace = Vec::new();
        let mut c = ctx(&mut trace, 0.0, Point::new(2000.0, 0.0));
        assert!(st.on_receive(&msg(), false, &mut c, &params, &mut fixed(0.0)).is_empty());
        assert!(st.received.is_empty() && trace.is_empty());
    }

    #[test]
    fn duplicate_cancels_timer() {
        let params = ProtocolParams::default();
        let mut st = with_k(6.0);
        let mut trace = Vec::new();
        let mut rng = fixed(0.0);
        let m = msg();
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.0, Point::new(10.0, 0.0)), &params, &mut rng);
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.1, Point::new(10.0, 0.0)), &params, &mut rng);
        assert!(st.pending_timers.is_empty());
        assert_eq!(st.received[&0].duplicate_count, 1);
        let out = st.on_timer_expiry(0, true, &mut ctx(&mut trace, 0.5, Point::new(10.0, 0.0)), &params, &mut rng);
        assert!(out.is_none());
        assert_eq!(st.tx_count, 0);
        assert_eq!(trace.last().unwrap().kind, TraceKind::TimerCancel);
    }

    #[test]
    fn s_gate_survival_drawn_once() {
        let params = ProtocolParams::default().with_mechanisms(false, true);
        let mut trace = Vec::new();
        let m = msg();
        let pos = Point::new(10.0, 0.0);
        // k_med = 0: survival probability 1 - s = 0.5
        let mut st = with_k(0.0);
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.0, pos), &params, &mut fixed(0.9));
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.1, pos), &params, &mut fixed(0.2));
        assert_eq!(st.pending_timers[&0].survives, Some(true));
        // a later duplicate with an rng that would fail does not redraw
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.2, pos), &params, &mut fixed(0.9));
        assert!(st.pending_timers.contains_key(&0));
        let out = st.on_timer_expiry(0, true, &mut ctx(&mut trace, 0.5, pos), &params, &mut fixed(0.9));
        assert_eq!(out.unwrap().hop_count, 1);
        assert_eq!(out.unwrap().relay_pos, pos);

        let mut st = with_k(0.0);
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.0, pos), &params, &mut fixed(0.0));
        st.on_receive(&m, true, &mut ctx(&mut trace, 0.1, pos), &params, &mut fixed(0.7));
        assert!(st.pending_timers.is_empty());
        assert_eq!(trace.last().unwrap().kind, TraceKind::SuppressS);
    }

    #[test]
    fn p_gate_at_expiry() {
        let pos = Point::new(0.0, 0.0);
        let mut trace = Vec::new();
        let on = ProtocolParams::default().with_mechanisms(true, false);
        let mut st = with_k(5.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &on, &mut fixed(0.0));
        let out = st.on_timer_expiry(0, true, &mut ctx(&mut trace, 0.5, pos), &on, &mut fixed(0.9));
        assert!(out.is_none());
        assert_eq!(trace.last().unwrap().kind, TraceKind::SuppressP);
        assert!(st.pending_timers.is_empty());

        let mut st = with_k(5.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &on, &mut fixed(0.0));
        assert!(st.on_timer_expiry(0, true, &mut ctx(&mut trace, 0.5, pos), &on, &mut fixed(0.6)).is_some());

        let off = ProtocolParams::default();
        let mut st = with_k(5.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &off, &mut fixed(0.0));
        assert!(st.on_timer_expiry(0, true, &mut ctx(&mut trace, 0.5, pos), &off, &mut fixed(0.99)).is_some());
    }

    #[test]
    fn p_gate_inactive_below_threshold() {
        let pos = Point::new(0.0, 0.0);
        let on = ProtocolParams::default().with_mechanisms(true, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut trace = Vec::new();
            let mut st = with_k(3.5);
            st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &on, &mut rng);
            assert!(st.on_timer_expiry(0, true, &mut ctx(&mut trace, 0.5, pos), &on, &mut rng).is_some());
        }
    }

    #[test]
    fn scf_assignment() {
        let pos = Point::new(0.0, 0.0);
        let mut trace = Vec::new();
        let off = ProtocolParams::default();
        let mut st = with_k(1.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &off, &mut fixed(0.99));
        assert!(st.scf_carrying.contains(&0));

        let on = ProtocolParams::default().with_mechanisms(true, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 20_000;
        let mut hits = 0;
        for _ in 0..trials {
            let mut st = with_k(6.0);
            st.received.insert(
                0,
                Reception {
                    first_rx_time: 0.0,
                    first_rx_pos: pos,
                    relay_pos: pos,
                    duplicate_count: 0,
                    message: msg(),
                    originated: false,
                },
            );
            if st.scf_assign(0, &mut ctx(&mut trace, 0.0, pos), &on, &mut rng) {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!((rate - 2.0 / 3.0).abs() < 0.015, "{rate}");
    }

    #[test]
    fn scf_retransmits_on_new_neighbour() {
        let pos = Point::new(0.0, 0.0);
        let params = ProtocolParams::default();
        let mut trace = Vec::new();
        let mut st = with_k(0.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &params, &mut fixed(0.0));
        assert!(st.scf_carrying.contains(&0));
        let tx = st.on_beacon_heard(3, true, &mut ctx(&mut trace, 1.0, pos), &params);
        assert_eq!(tx.len(), 1);
        assert!(st.on_beacon_heard(3, true, &mut ctx(&mut trace, 2.0, pos), &params).is_empty());
        assert!(st.on_beacon_heard(3, true, &mut ctx(&mut trace, 3.5, pos), &params).is_empty());
        assert_eq!(st.on_beacon_heard(3, true, &mut ctx(&mut trace, 6.0, pos), &params).len(), 1);
        assert!(st.on_beacon_heard(4, false, &mut ctx(&mut trace, 7.0, pos), &params).is_empty());
        assert_eq!(st.on_beacon_heard(5, true, &mut ctx(&mut trace, 8.0, pos), &params).len(), 1);
        assert_eq!(trace.last().unwrap().kind, TraceKind::ScfTx);
    }

    #[test]
    fn echo_check_makes_boundary_agent() {
        let pos = Point::new(0.0, 0.0);
        let params = ProtocolParams::default();
        let mut trace = Vec::new();
        let mut st = with_k(6.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &params, &mut fixed(0.0));
        assert!(st.on_echo_check(0, true, &mut ctx(&mut trace, 1.0, pos), &params, &mut fixed(0.0)));
        let mut st = with_k(6.0);
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.0, pos), &params, &mut fixed(0.0));
        st.on_receive(&msg(), true, &mut ctx(&mut trace, 0.2, pos), &params, &mut fixed(0.0));
        assert!(!st.on_echo_check(0, true, &mut ctx(&mut trace, 1.0, pos), &params, &mut fixed(0.0)));
    }

    #[test]
    fn duplicate_statistics_examples() {
        let ev = |vehicle, kind| TraceEvent {
            time_s: 0.0,
            vehicle,
            kind,
            msg_id: 0,
            k_med: 0.0,
        };
        let once = [ev(0, TraceKind::Tx), ev(1, TraceKind::Rx), ev(2, TraceKind::Rx)];
        assert_eq!(duplicate_statistics(&once), 0.0);
        // star: centre 0 transmits, leaves 1 and 2 retransmit back to it
        let star = [
            ev(0, TraceKind::Tx),
            ev(1, TraceKind::Rx),
            ev(2, TraceKind::Rx),
            ev(1, TraceKind::Tx),
            ev(0, TraceKind::Rx),
            ev(2, TraceKind::Tx),
            ev(0, TraceKind::Rx),
        ];
        assert!((duplicate_statistics(&star) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(duplicate_statistics(&[]), 0.0);
    }

    #[test]
    fn trace_csv() {
        let trace = [TraceEvent {
            time_s: 1.5,
            vehicle: 4,
            kind: TraceKind::SuppressP,
            msg_id: 0,
            k_med: 5.25,
        }];
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time_s,vehicle,event,msg_id,k_med\n1.500000,4,suppress_p,0,5.250000\n");
        assert_eq!("scf_on".parse::<TraceKind>().unwrap(), TraceKind::ScfOn);
    }

    /// Scripted event sequence applied to one vehicle; returns its trace.
    fn script(params: &ProtocolParams, k: f64, seed: u64, events: &[(u8, f64)]) -> Vec<TraceEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = with_k(k);
        let mut trace = Vec::new();
        let pos = Point::new(30.0, 0.0);
        for &(op, t) in events {
            let mut c = ctx(&mut trace, t, pos);
            match op % 4 {
                0 | 1 => {
                    st.on_receive(&msg(), true, &mut c, params, &mut rng);
                }
                2 => {
                    st.on_timer_expiry(0, true, &mut c, params, &mut rng);
                }
                _ => {
                    st.on_echo_check(0, true, &mut c, params, &mut rng);
                }
            }
        }
        trace
    }

    proptest! {
        #[test]
        fn s_range_and_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (sl, sh) = (s_value(lo).unwrap(), s_value(hi).unwrap());
            prop_assert!((0.5..=1.0).contains(&sl) && (0.5..=1.0).contains(&sh));
            prop_assert!(sl <= sh);
        }

        #[test]
        fn p_range_and_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (pl, ph) = (p_value(lo).unwrap(), p_value(hi).unwrap());
            prop_assert!(pl > 0.5 && pl <= 1.0 && ph > 0.5 && ph <= 1.0);
            if lo <= 4.0 { prop_assert_eq!(pl, 1.0); }
            prop_assert!(ph <= pl);
        }

        #[test]
        fn disabled_mechanisms_match_baseline(
            k in 0.0f64..12.0,
            seed_a in any::<u64>(),
            seed_b in any::<u64>(),
            events in prop::collection::vec((0u8..4, 0.0f64..3.0), 1..12),
        ) {
            let mut events = events;
            events.sort_by(|x, y| x.1.total_cmp(&y.1));
            let base = ProtocolParams::default();
            let inert = ProtocolParams { k_low: 0.0, k_high: f64::INFINITY, ..base }
                .with_mechanisms(true, true);
            // baseline consumes no randomness, so the stream does not matter
            let t0 = script(&base, k.max(3.0), seed_a, &events);
            prop_assert_eq!(&t0, &script(&base, k.max(3.0), seed_b, &events));
            // with both gates unreachable the extended machine is identical
            prop_assert_eq!(&t0, &script(&inert, k.max(3.0), seed_a, &events));
        }

        #[test]
        fn at_most_one_timer_tx(events in prop::collection::vec((0u8..4, 0.0f64..3.0), 1..20), seed in any::<u64>(), k in 0.0f64..10.0) {
            let params = ProtocolParams::default().with_mechanisms(true, true);
            let trace = script(&params, k, seed, &events);
            prop_assert!(trace.iter().filter(|e| e.kind == TraceKind::Tx).count() <= 1);
        }
    }
}
