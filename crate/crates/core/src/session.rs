//! Quasi-static interactive loop.
//!
//! The user moves a proxy pose. The simulated part (part 2) is tied to the
//! proxy by a spring and damper and additionally feels the geometric wrench
//! against the fixed part (part 1, at the world origin). Each tick runs one
//! semi-implicit step: spring and damping are implicit, the geometric wrench
//! explicit.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::Rotation3;

use crate::energy::{wrench, PosePair, Wrench};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::grid::AffinityGrid;
use crate::protocol::{codes, SessionSettings, WireMessage, WirePose};

/// The fixed part's field (part 1) and the moving part's field (part 2).
#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub fixed: &'a AffinityGrid,
    pub moving: &'a AffinityGrid,
}

impl<'a> Scene<'a> {
    pub fn new(fixed: &'a AffinityGrid, moving: &'a AffinityGrid) -> Self {
        Scene { fixed, moving }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub sim_pose: RigidTransform,
    pub proxy_pose: RigidTransform,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
    pub settings: SessionSettings,
    pub tick: u64,
    /// Geometric wrench at `sim_pose`.
    pub last_wrench: Wrench,
    /// Set when the last wrench evaluation failed and the pose was held.
    pub flagged: bool,
}

impl SessionState {
    /// Proxy and simulated part both start at `settings.initial_pose`.
    pub fn new(settings: SessionSettings, scene: &Scene) -> Result<Self> {
        settings.validate()?;
        let pose = settings.initial_pose.to_transform()?;
        let mut s = SessionState {
            sim_pose: pose,
            proxy_pose: pose,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            settings,
            tick: 0,
            last_wrench: Wrench::zero(settings.gamma_sc),
            flagged: false,
        };
        s.evaluate(scene);
        Ok(s)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.settings.tick_rate
    }

    fn evaluate(&mut self, scene: &Scene) {
        match wrench(
            scene.fixed,
            scene.moving,
            &PosePair::from_relative(self.sim_pose),
            self.settings.gamma_sc,
        ) {
            Ok(w) => {
                self.last_wrench = w;
                self.flagged = false;
            }
            Err(e) => {
                warn!("wrench evaluation failed at tick {}: {e}", self.tick);
                self.flagged = true;
            }
        }
    }

    /// Advances one tick of length `dt` toward the current proxy.
    pub fn step(&mut self, scene: &Scene, dt: f64) {
        self.tick += 1;
        if self.flagged {
            self.velocity = Vec3::zeros();
            self.angular_velocity = Vec3::zeros();
            self.evaluate(scene);
            return;
        }
        let c = self.settings.coupling;
        let w = &self.last_wrench;
        let t = *self.sim_pose.translation();

        let pull = self.proxy_pose.translation() - t;
        let drive = w.force() + pull * c.k_t;
        self.velocity = (self.velocity + drive * (dt / c.mass))
            / (1.0 + dt * c.c_t / c.mass + dt * dt * c.k_t / c.mass);
        let moved = t + self.velocity * dt;

        let rotation = if self.settings.lock_rotation {
            self.angular_velocity = Vec3::zeros();
            *self.sim_pose.rotation()
        } else {
            // geometric torque is about part 1's origin; move it to the part's own origin
            let torque = w.torque() - t.cross(&w.force());
            let error = Rotation3::from_matrix_unchecked(
                self.proxy_pose.rotation() * self.sim_pose.rotation().transpose(),
            )
            .scaled_axis();
            let drive = torque + error * c.k_r;
            self.angular_velocity = (self.angular_velocity + drive * (dt / c.inertia))
                / (1.0 + dt * c.c_r / c.inertia + dt * dt * c.k_r / c.inertia);
            let turn = Rotation3::new(self.angular_velocity * dt);
            *turn.matrix() * self.sim_pose.rotation()
        };
        self.sim_pose = RigidTransform::new(rotation, moved).unwrap_or_else(|_| {
            debug!("re-orthonormalising rotation at tick {}", self.tick);
            let r = Rotation3::from_matrix(&rotation);
            RigidTransform::from_rotation_vector(&r.scaled_axis(), moved)
        });
        self.evaluate(scene);
    }

    pub fn frame(&self, servo_rate_estimate: f64) -> WireMessage {
        let w = &self.last_wrench;
        WireMessage::StateFrame {
            tick: self.tick,
            sim_pose: WirePose::from(&self.sim_pose),
            energy: w.energy,
            force: w.force,
            torque: w.torque,
            servo_rate_estimate,
        }
    }
}

/// Pending proxy updates keyed by tick.
#[derive(Clone, Debug, Default)]
pub struct Mailbox {
    pending: BTreeMap<u64, WirePose>,
}

impl Mailbox {
    pub fn push(&mut self, tick: u64, pose: WirePose) {
        self.pending.insert(tick, pose);
    }

    /// Latest update with tick `<= tick`; older ones are dropped, later ones kept.
    pub fn take_for(&mut self, tick: u64) -> Option<WirePose> {
        let later = self.pending.split_off(&(tick + 1));
        let latest = self.pending.last_key_value().map(|(_, p)| *p);
        self.pending = later;
        latest
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

pub trait Clock {
    /// Time since an arbitrary fixed start.
    fn now(&self) -> Duration;
    fn sleep_until(&mut self, t: Duration);
}

pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep_until(&mut self, t: Duration) {
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
    }
}

/// Clock that only moves when slept on; work takes no time.
#[derive(Clone, Copy, Debug, Default)]
pub struct VirtualClock {
    now: Duration,
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        self.now
    }

    fn sleep_until(&mut self, t: Duration) {
        self.now = self.now.max(t);
    }
}

pub enum Inbound {
    /// One length-prefixed message.
    Frame(Vec<u8>),
    Idle,
    Closed,
}

/// Non-blocking message transport.
pub trait Transport {
    fn poll(&mut self) -> Inbound;
    fn send(&mut self, frame: &[u8]) -> std::io::Result<()>;
}

/// Server end of an in-process channel pair.
pub struct MemoryTransport {
    inbox: mpsc::Receiver<Vec<u8>>,
    outbox: mpsc::Sender<Vec<u8>>,
}

/// Client end of an in-process channel pair.
pub struct MemoryClient {
    outbox: mpsc::Sender<Vec<u8>>,
    inbox: mpsc::Receiver<Vec<u8>>,
}

pub fn memory_pair() -> (MemoryTransport, MemoryClient) {
    let (to_server, server_in) = mpsc::channel();
    let (to_client, client_in) = mpsc::channel();
    (
        MemoryTransport {
            inbox: server_in,
            outbox: to_client,
        },
        MemoryClient {
            outbox: to_server,
            inbox: client_in,
        },
    )
}

impl Transport for MemoryTransport {
    fn poll(&mut self) -> Inbound {
        match self.inbox.try_recv() {
            Ok(f) => Inbound::Frame(f),
            Err(mpsc::TryRecvError::Empty) => Inbound::Idle,
            Err(mpsc::TryRecvError::Disconnected) => Inbound::Closed,
        }
    }

    fn send(&mut self, frame: &[u8]) -> std::io::Result<()> {
        self.outbox
            .send(frame.to_vec())
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "client gone"))
    }
}

impl MemoryClient {
    pub fn send(&self, msg: &WireMessage) -> bool {
        self.outbox.send(msg.encode()).is_ok()
    }

    pub fn send_raw(&self, bytes: Vec<u8>) -> bool {
        self.outbox.send(bytes).is_ok()
    }

    /// Every message the server has sent so far.
    pub fn drain(&self) -> Vec<WireMessage> {
        self.inbox
            .try_iter()
            .filter_map(|f| WireMessage::decode(&f).ok())
            .collect()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<WireMessage> {
        self.inbox
            .recv_timeout(timeout)
            .ok()
            .and_then(|f| WireMessage::decode(&f).ok())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunLimits {
    /// Stop after this many ticks past the handshake.
    pub max_ticks: Option<u64>,
    pub handshake_timeout: Duration,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            max_ticks: None,
            handshake_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionReport {
    /// Ticks actually stepped.
    pub ticks_run: u64,
    /// Ticks dropped because the loop overran.
    pub ticks_skipped: u64,
    pub errors_sent: u64,
    pub final_state: Option<SessionState>,
    pub servo_rate_estimate: f64,
}

impl SessionReport {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.ticks_run + self.ticks_skipped;
        if total == 0 {
            0.0
        } else {
            self.ticks_skipped as f64 / total as f64
        }
    }
}

/// Smoothing weight of the newest interval in the servo-rate average.
const RATE_SMOOTHING: f64 = 0.1;

/// Applies the fields of a client config object on top of `base`.
pub fn merge_settings(base: &SessionSettings, frame: &[u8]) -> Result<SessionSettings> {
    let (payload, _) = crate::protocol::split_frame(frame)?
        .ok_or_else(|| Error::Protocol("truncated message".into()))?;
    let value: serde_json::Value = serde_json::from_slice(payload)
        .map_err(|e| Error::Protocol(format!("bad message: {e}")))?;
    let mut merged = serde_json::to_value(base).expect("settings serialize");
    merge_json(&mut merged, &value);
    if let serde_json::Value::Object(m) = &mut merged {
        m.remove("type");
    }
    let s: SessionSettings = serde_json::from_value(merged)
        .map_err(|e| Error::Protocol(format!("bad session config: {e}")))?;
    s.validate()?;
    Ok(s)
}

fn merge_json(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn send<T: Transport>(transport: &mut T, msg: &WireMessage) -> bool {
    transport.send(&msg.encode()).is_ok()
}

/// Runs one session until the client disconnects or `limits.max_ticks` is hit.
///
/// The client opens with a `SessionConfig`; fields it leaves out come from
/// `base`. The server answers with the tick-0 frame and from then on sends
/// one frame per tick. A tick that starts late runs immediately and the
/// ticks whose slots already passed are dropped.
pub fn run_session<T: Transport, C: Clock>(
    scene: &Scene,
    base: &SessionSettings,
    transport: &mut T,
    clock: &mut C,
    limits: &RunLimits,
) -> Result<SessionReport> {
    let mut report = SessionReport {
        ticks_run: 0,
        ticks_skipped: 0,
        errors_sent: 0,
        final_state: None,
        servo_rate_estimate: base.tick_rate,
    };
    let opened = clock.now();
    let settings = loop {
        match transport.poll() {
            Inbound::Closed => return Ok(report),
            Inbound::Idle => {
                if clock.now() - opened > limits.handshake_timeout {
                    return Ok(report);
                }
                let t = clock.now() + Duration::from_millis(1);
                clock.sleep_until(t);
            }
            Inbound::Frame(f) => match WireMessage::decode(&f) {
                Ok(WireMessage::SessionConfig(_)) => match merge_settings(base, &f) {
                    Ok(s) => break s,
                    Err(e) => {
                        report.errors_sent += 1;
                        send(transport, &WireMessage::error(codes::CONFIG, e.to_string()));
                    }
                },
                Ok(other) => {
                    report.errors_sent += 1;
                    let text =
                        format!("expected SessionConfig first, got {}", variant_name(&other));
                    send(transport, &WireMessage::error(codes::UNEXPECTED, text));
                }
                Err(e) => {
                    report.errors_sent += 1;
                    send(
                        transport,
                        &WireMessage::error(codes::MALFORMED, e.to_string()),
                    );
                }
            },
        }
    };

    let mut state = SessionState::new(settings, scene)?;
    let dt = state.dt();
    let mut rate = settings.tick_rate;
    if !send(transport, &state.frame(rate)) {
        report.final_state = Some(state);
        return Ok(report);
    }
    let start = clock.now();
    let mut last = start;
    let mut mailbox = Mailbox::default();
    let mut next: u64 = 1;
    loop {
        if limits.max_ticks.is_some_and(|m| next > m) {
            break;
        }
        clock.sleep_until(start + Duration::from_secs_f64(next as f64 / settings.tick_rate));
        let mut closed = false;
        loop {
            match transport.poll() {
                Inbound::Idle => break,
                Inbound::Closed => {
                    closed = true;
                    break;
                }
                Inbound::Frame(f) => match WireMessage::decode(&f) {
                    Ok(WireMessage::ProxyUpdate { tick, pose }) => match pose.to_transform() {
                        Ok(_) => mailbox.push(tick, pose),
                        Err(e) => {
                            report.errors_sent += 1;
                            send(
                                transport,
                                &WireMessage::error(codes::MALFORMED, e.to_string()),
                            );
                        }
                    },
                    Ok(other) => {
                        report.errors_sent += 1;
                        let text = format!("unexpected {} during a session", variant_name(&other));
                        send(transport, &WireMessage::error(codes::UNEXPECTED, text));
                    }
                    Err(e) => {
                        report.errors_sent += 1;
                        send(
                            transport,
                            &WireMessage::error(codes::MALFORMED, e.to_string()),
                        );
                    }
                },
            }
        }
        if closed {
            break;
        }
        if let Some(p) = mailbox.take_for(next) {
            state.proxy_pose = p.to_transform()?;
        }
        state.tick = next - 1;
        state.step(scene, dt);
        report.ticks_run += 1;
        let now = clock.now();
        let interval = (now - last).as_secs_f64();
        if interval > 0.0 {
            rate += RATE_SMOOTHING * (1.0 / interval - rate);
        }
        last = now;
        if state.flagged {
            report.errors_sent += 1;
            send(
                transport,
                &WireMessage::error(codes::EVALUATION, format!("wrench failed at tick {next}")),
            );
        }
        if !send(transport, &state.frame(rate)) {
            break;
        }
        let due = (clock.now() - start).as_secs_f64() * settings.tick_rate;
        let due = due.floor() as u64;
        if due > next + 1 {
            report.ticks_skipped += due - next - 1;
            next = due;
        } else {
            next += 1;
        }
    }
    report.servo_rate_estimate = rate;
    report.final_state = Some(state);
    Ok(report)
}

fn variant_name(m: &WireMessage) -> &'static str {
    match m {
        WireMessage::ProxyUpdate { .. } => "ProxyUpdate",
        WireMessage::StateFrame { .. } => "StateFrame",
        WireMessage::SessionConfig(_) => "SessionConfig",
        WireMessage::Error { .. } => "Error",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(x: f64) -> WirePose {
        WirePose {
            translation: [x, 0.0, 0.0],
            rotation: [0.0; 3],
        }
    }

    #[test]
    fn mailbox_keeps_freshest_not_newer() {
        let mut m = Mailbox::default();
        m.push(3, pose(3.0));
        m.push(1, pose(1.0));
        m.push(7, pose(7.0));
        assert_eq!(m.take_for(5), Some(pose(3.0)));
        assert_eq!(m.take_for(6), None);
        assert_eq!(m.len(), 1);
        assert_eq!(m.take_for(7), Some(pose(7.0)));
        assert!(m.is_empty());
    }

    #[test]
    fn virtual_clock_only_moves_forward() {
        let mut c = VirtualClock::default();
        c.sleep_until(Duration::from_millis(5));
        c.sleep_until(Duration::from_millis(2));
        assert_eq!(c.now(), Duration::from_millis(5));
    }

    #[test]
    fn config_merge_keeps_unsent_fields() {
        let base = SessionSettings {
            tick_rate: 500.0,
            ..SessionSettings::default()
        };
        let frame = br#"{"type":"SessionConfig","gamma_sc":2.5,"coupling":{"k_t":9}}"#;
        let mut bytes = (frame.len() as u32).to_le_bytes().to_vec();
        bytes.extend_from_slice(frame);
        let s = merge_settings(&base, &bytes).unwrap();
        assert_eq!(s.tick_rate, 500.0);
        assert_eq!(s.gamma_sc, 2.5);
        assert_eq!(s.coupling.k_t, 9.0);
        assert_eq!(s.coupling.c_t, base.coupling.c_t);
    }
}
