//! Discrete-event simulation of the AP-coordinated and self-coordinated
//! localization protocols, plus a rule checker for the resulting transcripts.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::profiles::probing_schedule;
use crate::scene::{CoverageClass, EntityRef, Scenario};
use crate::{Error, Result};

/// Opaque endpoint standing in for the core network (location server).
pub const CORE: &str = "core";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    ApCoordinated,
    SelfCoordinated,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ApCoordinated => "ap-coordinated",
            Mode::SelfCoordinated => "self-coordinated",
        })
    }
}

/// Declared in protocol order, which is also the `Ord` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    Discovery,
    DiscoveryResponse,
    CoordinatorNotify,
    LasRequest,
    CoreExchange,
    DeviceNotify,
    ResourceGrant,
    ProfileTrigger,
    RefSignal,
    MeasurementReport,
    ResultUpdate,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Discovery,
        MessageKind::DiscoveryResponse,
        MessageKind::CoordinatorNotify,
        MessageKind::LasRequest,
        MessageKind::CoreExchange,
        MessageKind::DeviceNotify,
        MessageKind::ResourceGrant,
        MessageKind::ProfileTrigger,
        MessageKind::RefSignal,
        MessageKind::MeasurementReport,
        MessageKind::ResultUpdate,
    ];

    /// Position in the step sequence. Kinds with equal rank may interleave.
    pub fn rank(self) -> u8 {
        use MessageKind::*;
        match self {
            Discovery | DiscoveryResponse => 1,
            CoordinatorNotify => 2,
            LasRequest => 3,
            CoreExchange | DeviceNotify => 4,
            ResourceGrant | ProfileTrigger => 5,
            RefSignal => 6,
            MeasurementReport => 7,
            ResultUpdate => 8,
        }
    }

    /// Step of the AP-coordinated sequence (1..=6); discovery is step 0.
    pub fn step(self) -> u8 {
        self.rank().saturating_sub(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub src: String,
    pub dst: String,
    /// Entity that produced the content. Differs from `src` on relayed hops.
    pub origin: String,
    pub send_time: f64,
    pub deliver_time: f64,
    pub payload: String,
    /// RIS controllers a reference signal is reflected by.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub via: Vec<String>,
}

impl Message {
    fn order_key(&self) -> (f64, &str, &str, MessageKind) {
        (self.deliver_time, &self.src, &self.dst, self.kind)
    }
}

/// Transcript ordering: deliver time, then `(src, dst, kind)`.
pub fn transcript_order(a: &Message, b: &Message) -> Ordering {
    let (ta, sa, da, ka) = a.order_key();
    let (tb, sb, db, kb) = b.order_key();
    ta.total_cmp(&tb)
        .then_with(|| (sa, da, ka).cmp(&(sb, db, kb)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailReason {
    Timeout,
    NoCoordinator,
    /// No beacon or assistant UE can send reference signals to the target.
    NoAnchors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    Failed(FailReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Coordinator,
    Target,
    Assistant,
    Beacon,
    RisController,
    Ap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Discovering,
    Coordinating,
    Notified,
    Granted,
    Configured,
    Transmitted,
    Measured,
    Done,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: String,
    pub role: Role,
    pub phase: Phase,
    pub neighbors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub mode: Mode,
    pub target: String,
    pub coordinator: Option<String>,
    pub messages: Vec<Message>,
    pub outcome: Outcome,
    /// Time the run ended (completion or timeout expiry).
    pub end_time: f64,
    pub nodes: Vec<NodeState>,
}

impl Transcript {
    /// One JSON object per delivered message.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("message serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub hop_s: f64,
    /// Uniform extra delay in `[0, jitter_s)` per hop.
    pub jitter_s: f64,
    pub core_round_trip_s: f64,
    /// Duration of one reference-signal slot.
    pub slot_s: f64,
    pub timeout_s: f64,
    pub loss_probability: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            hop_s: 1e-3,
            jitter_s: 2e-4,
            core_round_trip_s: 5e-3,
            slot_s: 1e-4,
            timeout_s: 0.1,
            loss_probability: 0.0,
        }
    }
}

impl LatencyModel {
    /// Long enough for any two-hop exchange to land.
    fn guard(&self) -> f64 {
        3.0 * (self.hop_s + self.jitter_s)
    }
}

/// Takes `node` offline as soon as any message beyond `after_step` is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outage {
    pub node: String,
    pub after_step: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub latency: LatencyModel,
    pub seed: u64,
    /// Solve at the coordinator (MeasurementReport) instead of at the target.
    pub offload: bool,
    /// Send the optional ResultUpdate after a local solve.
    pub report_result: bool,
    pub n_blocks: usize,
    pub outage: Option<Outage>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            latency: LatencyModel::default(),
            seed: 0,
            offload: false,
            report_result: true,
            n_blocks: 16,
            outage: None,
        }
    }
}

pub fn select_mode(scene: &Scenario, target: &str) -> Result<Mode> {
    Ok(match scene.coverage_class(target)? {
        CoverageClass::InCoverage | CoverageClass::PartialCoverage => Mode::ApCoordinated,
        CoverageClass::OutOfCoverage => Mode::SelfCoordinated,
    })
}

/// Runs whichever protocol `select_mode` picks.
pub fn run_protocol(scene: &Scenario, target: &str, cfg: &ProtocolConfig) -> Result<Transcript> {
    match select_mode(scene, target)? {
        Mode::ApCoordinated => run_ap_coordinated(scene, target, cfg),
        Mode::SelfCoordinated => run_self_coordinated(scene, target, cfg),
    }
}

pub fn run_ap_coordinated(
    scene: &Scenario,
    target: &str,
    cfg: &ProtocolConfig,
) -> Result<Transcript> {
    if select_mode(scene, target)? != Mode::ApCoordinated {
        return Err(Error::InvalidScenario(format!(
            "`{target}` is out of coverage of every AP"
        )));
    }
    let relay = match scene.coverage_class(target)? {
        CoverageClass::PartialCoverage => scene.coverage_relay(target)?,
        _ => None,
    };
    let anchor = scene.position(relay.as_deref().unwrap_or(target))?;
    let ap = scene
        .aps
        .iter()
        .filter(|ap| {
            (ap.pose.position - anchor).norm() <= ap.range
                && scene.clear_between(&ap.pose.position, &anchor)
        })
        .min_by(|a, b| {
            let da = (a.pose.position - anchor).norm();
            let db = (b.pose.position - anchor).norm();
            da.total_cmp(&db).then_with(|| a.id.cmp(&b.id))
        })
        .ok_or_else(|| Error::InvalidScenario("no AP covers the target or its relay".into()))?;
    let mut sim = Sim::new(scene, target, cfg, Mode::ApCoordinated)?;
    sim.relay = relay;
    sim.coordinator = Some(ap.id.clone());
    sim.send(
        MessageKind::LasRequest,
        target,
        &ap.id,
        "las request".into(),
        Vec::new(),
    );
    Ok(sim.run())
}

pub fn run_self_coordinated(
    scene: &Scenario,
    target: &str,
    cfg: &ProtocolConfig,
) -> Result<Transcript> {
    if select_mode(scene, target)? != Mode::SelfCoordinated {
        return Err(Error::InvalidScenario(format!(
            "`{target}` has AP coverage"
        )));
    }
    let mut sim = Sim::new(scene, target, cfg, Mode::SelfCoordinated)?;
    let p = scene.position(target)?;
    let mut near: Vec<String> = Vec::new();
    for e in scene.entities() {
        let discoverable = match e {
            EntityRef::Ue(u) => u.sidelink,
            EntityRef::Beacon(_) | EntityRef::Ris(_) => true,
            _ => false,
        };
        let q = e.position();
        if discoverable
            && e.id() != target
            && (q - p).norm() <= scene.sidelink_range
            && scene.clear_between(&p, &q)
        {
            near.push(e.id().to_string());
        }
    }
    near.sort();
    sim.set_phase(target, Phase::Discovering);
    if scene.ue(target)?.sidelink {
        for n in &near {
            sim.send(
                MessageKind::Discovery,
                target,
                n,
                "discovery".into(),
                Vec::new(),
            );
        }
    }
    let at = sim.guard();
    sim.timer(target, Timer::DiscoveryDone, at);
    Ok(sim.run())
}

#[derive(Debug, Clone, PartialEq)]
enum Timer {
    DiscoveryDone,
    SendRequest,
    Grant,
    Transmit,
}

#[derive(Debug, Clone)]
enum Action {
    Deliver { msg: Message, final_dst: String },
    Timer { node: String, timer: Timer },
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    seq: u64,
    action: Action,
}

impl Event {
    fn cmp_key(&self, other: &Self) -> Ordering {
        let rank = |a: &Action| match a {
            Action::Deliver { .. } => 0,
            Action::Timer { .. } => 1,
        };
        self.time
            .total_cmp(&other.time)
            .then_with(|| rank(&self.action).cmp(&rank(&other.action)))
            .then_with(|| match (&self.action, &other.action) {
                (Action::Deliver { msg: a, .. }, Action::Deliver { msg: b, .. }) => {
                    (&a.src, &a.dst, a.kind).cmp(&(&b.src, &b.dst, b.kind))
                }
                _ => Ordering::Equal,
            })
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

struct Sim<'a> {
    scene: &'a Scenario,
    cfg: &'a ProtocolConfig,
    mode: Mode,
    target: String,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: f64,
    log: Vec<Message>,
    nodes: BTreeMap<String, NodeState>,
    coordinator: Option<String>,
    relay: Option<String>,
    down: BTreeSet<String>,
    transmitters: Vec<String>,
    ris: Vec<String>,
    slots: BTreeMap<String, f64>,
    refs: BTreeSet<String>,
    outcome: Option<Outcome>,
}

impl<'a> Sim<'a> {
    fn new(scene: &'a Scenario, target: &str, cfg: &'a ProtocolConfig, mode: Mode) -> Result<Self> {
        scene.ue(target)?;
        let mut nodes = BTreeMap::new();
        for e in scene.entities() {
            let role = match e {
                EntityRef::Ue(u) if u.id == target => Role::Target,
                EntityRef::Ue(_) => Role::Assistant,
                EntityRef::Beacon(_) => Role::Beacon,
                EntityRef::Ris(_) => Role::RisController,
                EntityRef::Ap(_) => Role::Ap,
            };
            let id = e.id().to_string();
            nodes.insert(
                id.clone(),
                NodeState {
                    id,
                    role,
                    phase: Phase::Idle,
                    neighbors: Vec::new(),
                },
            );
        }
        Ok(Self {
            scene,
            cfg,
            mode,
            target: target.to_string(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            log: Vec::new(),
            nodes,
            coordinator: None,
            relay: None,
            down: BTreeSet::new(),
            transmitters: Vec::new(),
            ris: Vec::new(),
            slots: BTreeMap::new(),
            refs: BTreeSet::new(),
            outcome: None,
        })
    }

    fn guard(&self) -> f64 {
        self.now + self.cfg.latency.guard()
    }

    fn coord(&self) -> &str {
        self.coordinator.as_deref().expect("coordinator chosen")
    }

    fn set_phase(&mut self, id: &str, phase: Phase) {
        if let Some(n) = self.nodes.get_mut(id) {
            if n.phase != Phase::Down {
                n.phase = phase;
            }
        }
    }

    fn push(&mut self, time: f64, action: Action) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            action,
        }));
    }

    fn timer(&mut self, node: &str, timer: Timer, at: f64) {
        self.push(
            at,
            Action::Timer {
                node: node.to_string(),
                timer,
            },
        );
    }

    fn send(&mut self, kind: MessageKind, src: &str, dst: &str, payload: String, via: Vec<String>) {
        if let Some(o) = &self.cfg.outage {
            if kind.step() > o.after_step && self.down.insert(o.node.clone()) {
                self.set_phase(&o.node.clone(), Phase::Down);
            }
        }
        if self.down.contains(src) || src == dst {
            return;
        }
        let coord = self.coordinator.as_deref();
        let hop = match &self.relay {
            Some(r)
                if (src == self.target && Some(dst) == coord)
                    || (Some(src) == coord && dst == self.target) =>
            {
                r.clone()
            }
            _ => dst.to_string(),
        };
        let msg = Message {
            kind,
            src: src.to_string(),
            dst: hop,
            origin: src.to_string(),
            send_time: self.now,
            deliver_time: 0.0,
            payload,
            via,
        };
        self.hop(msg, dst.to_string());
    }

    fn hop(&mut self, mut msg: Message, final_dst: String) {
        let l = &self.cfg.latency;
        let delay = if msg.src == CORE || msg.dst == CORE {
            l.core_round_trip_s / 2.0
        } else {
            l.hop_s + l.jitter_s * self.rng.random::<f64>()
        };
        let lost = self.rng.random::<f64>() < l.loss_probability;
        if lost {
            return;
        }
        msg.send_time = self.now;
        msg.deliver_time = self.now + delay;
        let t = msg.deliver_time;
        self.push(t, Action::Deliver { msg, final_dst });
    }

    fn finish(&mut self, outcome: Outcome) {
        self.outcome = Some(outcome);
        if outcome == Outcome::Completed {
            let t = self.target.clone();
            self.set_phase(&t, Phase::Done);
        }
    }

    fn run(mut self) -> Transcript {
        while self.outcome.is_none() {
            let Some(Reverse(ev)) = self.queue.pop() else {
                break;
            };
            self.now = ev.time;
            match ev.action {
                Action::Deliver { msg, final_dst } => {
                    if self.down.contains(&msg.dst) {
                        continue;
                    }
                    self.log.push(msg.clone());
                    if msg.dst != final_dst {
                        let relay = msg.dst.clone();
                        let fwd = Message {
                            src: relay,
                            dst: final_dst.clone(),
                            ..msg
                        };
                        self.hop(fwd, final_dst);
                    } else {
                        self.handle(msg);
                    }
                }
                Action::Timer { node, timer } => {
                    if !self.down.contains(&node) {
                        self.on_timer(&node, timer);
                    }
                }
            }
        }
        let (outcome, end_time) = match self.outcome {
            Some(o) => (o, self.now),
            None => (
                Outcome::Failed(FailReason::Timeout),
                self.now + self.cfg.latency.timeout_s,
            ),
        };
        if let Some(c) = &self.coordinator {
            if let Some(n) = self.nodes.get_mut(c) {
                n.role = Role::Coordinator;
            }
        }
        Transcript {
            mode: self.mode,
            target: self.target,
            coordinator: self.coordinator,
            messages: self.log,
            outcome,
            end_time,
            nodes: self.nodes.into_values().collect(),
        }
    }

    fn handle(&mut self, msg: Message) {
        use MessageKind::*;
        match msg.kind {
            Discovery => {
                let p = self.scene.position(&msg.dst).expect("known entity");
                let payload = format!("position={:.3},{:.3},{:.3}", p.x, p.y, p.z);
                self.send(DiscoveryResponse, &msg.dst, &msg.src, payload, Vec::new());
            }
            DiscoveryResponse => {
                if let Some(n) = self.nodes.get_mut(&msg.dst) {
                    n.neighbors.push(msg.origin.clone());
                    n.neighbors.sort();
                }
            }
            CoordinatorNotify => self.set_phase(&msg.dst, Phase::Coordinating),
            LasRequest => self.configure(),
            CoreExchange => {
                if msg.dst == CORE {
                    let c = msg.src.clone();
                    self.send(
                        CoreExchange,
                        CORE,
                        &c,
                        "location context".into(),
                        Vec::new(),
                    );
                } else {
                    self.notify_devices();
                }
            }
            DeviceNotify => self.set_phase(&msg.dst, Phase::Notified),
            ResourceGrant => {
                self.set_phase(&msg.dst, Phase::Granted);
                if let Some(&at) = self.slots.get(&msg.dst) {
                    let d = msg.dst.clone();
                    self.timer(&d, Timer::Transmit, at);
                }
            }
            ProfileTrigger => self.set_phase(&msg.dst, Phase::Configured),
            RefSignal => {
                self.refs.insert(msg.origin.clone());
                if self.refs.len() == self.transmitters.len() {
                    self.measured();
                }
            }
            MeasurementReport => {
                let (c, t) = (self.coord().to_string(), self.target.clone());
                self.send(ResultUpdate, &c, &t, "position estimate".into(), Vec::new());
            }
            ResultUpdate => self.finish(Outcome::Completed),
        }
    }

    fn on_timer(&mut self, node: &str, timer: Timer) {
        match timer {
            Timer::DiscoveryDone => self.elect(),
            Timer::SendRequest => {
                let c = self.coord().to_string();
                self.send(
                    MessageKind::LasRequest,
                    node,
                    &c,
                    "las request".into(),
                    Vec::new(),
                );
            }
            Timer::Grant => self.grant(),
            Timer::Transmit => {
                let (t, via) = (self.target.clone(), self.ris.clone());
                self.set_phase(node, Phase::Transmitted);
                self.send(
                    MessageKind::RefSignal,
                    node,
                    &t,
                    "reference signal".into(),
                    via,
                );
            }
        }
    }

    /// Highest compute capability among capable devices, ties to lowest id.
    fn elect(&mut self) {
        let t = self.target.clone();
        let neighbors = self.nodes[&t].neighbors.clone();
        let mut best: Option<(u32, String)> = None;
        let ids = std::iter::once(t.clone()).chain(neighbors);
        for id in ids {
            let Ok(ue) = self.scene.ue(&id) else { continue };
            if !ue.can_coordinate {
                continue;
            }
            let better = match &best {
                None => true,
                Some((c, bid)) => {
                    ue.compute_capability > *c || (ue.compute_capability == *c && id < *bid)
                }
            };
            if better {
                best = Some((ue.compute_capability, id));
            }
        }
        let Some((_, c)) = best else {
            self.finish(Outcome::Failed(FailReason::NoCoordinator));
            return;
        };
        self.coordinator = Some(c.clone());
        if c == t {
            self.configure();
        } else {
            self.send(
                MessageKind::CoordinatorNotify,
                &t,
                &c,
                "las configuration".into(),
                Vec::new(),
            );
            let at = self.guard();
            self.timer(&t, Timer::SendRequest, at);
        }
    }

    fn configure(&mut self) {
        let c = self.coord().to_string();
        self.set_phase(&c, Phase::Coordinating);
        match self.mode {
            Mode::ApCoordinated => self.send(
                MessageKind::CoreExchange,
                &c,
                CORE,
                "location context".into(),
                Vec::new(),
            ),
            Mode::SelfCoordinated => self.notify_devices(),
        }
    }

    fn notify_devices(&mut self) {
        let scene = self.scene;
        let c = self.coord().to_string();
        let p = scene.position(&self.target).expect("target exists");
        let reachable: Option<BTreeSet<String>> = match self.mode {
            Mode::ApCoordinated => None,
            Mode::SelfCoordinated => {
                Some(self.nodes[&self.target].neighbors.iter().cloned().collect())
            }
        };
        let known = |id: &str| reachable.as_ref().is_none_or(|r| r.contains(id));
        self.ris = scene
            .ris
            .iter()
            .filter(|r| known(&r.id) && scene.ris_serves(r, &p))
            .map(|r| r.id.clone())
            .collect();
        let served: Vec<_> = scene
            .ris
            .iter()
            .filter(|r| self.ris.contains(&r.id))
            .collect();
        self.transmitters = scene
            .beacons
            .iter()
            .filter(|b| {
                let q = b.pose.position;
                known(&b.id)
                    && (scene.clear_between(&q, &p)
                        || served.iter().any(|r| scene.ris_serves(r, &q)))
            })
            .map(|b| b.id.clone())
            .collect();
        if self.transmitters.is_empty() {
            self.transmitters = scene
                .ues
                .iter()
                .filter(|u| {
                    let q = u.pose.position;
                    u.sidelink
                        && u.id != self.target
                        && u.id != c
                        && known(&u.id)
                        && (q - p).norm() <= scene.sidelink_range
                        && scene.clear_between(&q, &p)
                })
                .map(|u| u.id.clone())
                .collect();
        }
        if self.transmitters.is_empty() {
            self.finish(Outcome::Failed(FailReason::NoAnchors));
            return;
        }
        let mut notify: Vec<String> = self.transmitters.iter().chain(&self.ris).cloned().collect();
        notify.push(self.target.clone());
        notify.sort();
        for id in notify {
            self.send(
                MessageKind::DeviceNotify,
                &c,
                &id,
                "las task".into(),
                Vec::new(),
            );
        }
        let at = self.guard();
        self.timer(&c, Timer::Grant, at);
    }

    fn grant(&mut self) {
        let c = self.coord().to_string();
        let start = self.guard();
        let refs: Vec<&_> = self
            .scene
            .ris
            .iter()
            .filter(|r| self.ris.contains(&r.id))
            .collect();
        let code_len = (refs.len() + 1).next_power_of_two();
        let digest = probing_schedule(&refs, code_len, self.cfg.n_blocks, self.cfg.seed)
            .map(|s| s.digest())
            .unwrap_or_default();
        let slot = self.cfg.latency.slot_s;
        for (i, tx) in self.transmitters.clone().iter().enumerate() {
            let at = start + i as f64 * slot;
            self.slots.insert(tx.clone(), at);
            self.send(
                MessageKind::ResourceGrant,
                &c,
                tx,
                format!("slot={i} start={at:.6}"),
                Vec::new(),
            );
        }
        let t = self.target.clone();
        let listen = format!("listen slots={}", self.transmitters.len());
        self.send(MessageKind::ResourceGrant, &c, &t, listen, Vec::new());
        for r in self.ris.clone() {
            self.send(
                MessageKind::ProfileTrigger,
                &c,
                &r,
                format!("schedule={digest} blocks={}", self.cfg.n_blocks),
                Vec::new(),
            );
        }
    }

    fn measured(&mut self) {
        use MessageKind::*;
        let (c, t) = (self.coord().to_string(), self.target.clone());
        self.set_phase(&t, Phase::Measured);
        if c == t {
            self.finish(Outcome::Completed);
        } else if self.cfg.offload {
            self.send(MeasurementReport, &t, &c, "measurements".into(), Vec::new());
        } else if self.cfg.report_result {
            self.send(ResultUpdate, &t, &c, "position estimate".into(), Vec::new());
        } else {
            self.finish(Outcome::Completed);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Message `index` sorts before its predecessor.
    Unsorted {
        index: usize,
    },
    DeliveredBeforeSent {
        index: usize,
    },
    /// Message `index` belongs to an earlier step than `after`.
    OutOfOrder {
        index: usize,
        kind: MessageKind,
        after: MessageKind,
    },
    WrongMode {
        index: usize,
        kind: MessageKind,
    },
    RefBeforeTrigger {
        index: usize,
        ris: String,
    },
    RefWithoutGrant {
        index: usize,
        device: String,
    },
    RepeatedRef {
        index: usize,
        device: String,
    },
    /// Number of distinct entities issuing coordinator messages.
    Coordinators(usize),
}

pub fn validate_transcript(t: &Transcript, mode: Mode) -> Vec<Violation> {
    use MessageKind::*;
    let mut out = Vec::new();
    let mut latest: Option<MessageKind> = None;
    let mut triggered = BTreeSet::new();
    let mut grants: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sent: BTreeMap<&str, usize> = BTreeMap::new();
    let mut coordinators = BTreeSet::new();
    for (i, m) in t.messages.iter().enumerate() {
        if i > 0 && transcript_order(&t.messages[i - 1], m) == Ordering::Greater {
            out.push(Violation::Unsorted { index: i });
        }
        if m.deliver_time < m.send_time {
            out.push(Violation::DeliveredBeforeSent { index: i });
        }
        match latest {
            Some(k) if m.kind.rank() < k.rank() => out.push(Violation::OutOfOrder {
                index: i,
                kind: m.kind,
                after: k,
            }),
            Some(k) if k.rank() >= m.kind.rank() => {}
            _ => latest = Some(m.kind),
        }
        let foreign = match mode {
            Mode::ApCoordinated => {
                matches!(m.kind, Discovery | DiscoveryResponse | CoordinatorNotify)
            }
            Mode::SelfCoordinated => m.kind == CoreExchange,
        };
        if foreign {
            out.push(Violation::WrongMode {
                index: i,
                kind: m.kind,
            });
        }
        match m.kind {
            ProfileTrigger => {
                triggered.insert(m.dst.as_str());
            }
            ResourceGrant => *grants.entry(m.dst.as_str()).or_default() += 1,
            RefSignal => {
                for r in &m.via {
                    if !triggered.contains(r.as_str()) {
                        out.push(Violation::RefBeforeTrigger {
                            index: i,
                            ris: r.clone(),
                        });
                    }
                }
                let g = grants.get(m.src.as_str()).copied().unwrap_or(0);
                let s = sent.entry(m.src.as_str()).or_default();
                if g == 0 {
                    out.push(Violation::RefWithoutGrant {
                        index: i,
                        device: m.src.clone(),
                    });
                } else if *s >= g {
                    out.push(Violation::RepeatedRef {
                        index: i,
                        device: m.src.clone(),
                    });
                }
                *s += 1;
            }
            _ => {}
        }
        if matches!(m.kind, DeviceNotify | ResourceGrant | ProfileTrigger) {
            coordinators.insert(m.origin.as_str());
        }
    }
    let n = coordinators.len();
    if n > 1 || (n == 0 && t.outcome == Outcome::Completed) {
        out.push(Violation::Coordinators(n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};
    use crate::scene::{ApSpec, BeaconSpec, RisSpec, UeSpec};

    fn minimal() -> Scenario {
        let mut s = Scenario::empty(28e9, 100e6, 32);
        s.aps.push(ApSpec {
            id: "ap".into(),
            pose: Pose::at(Vec3::new(0.0, 0.0, 10.0)),
            range: 100.0,
        });
        s.beacons
            .push(BeaconSpec::single("b", Vec3::new(-5.0, 0.0, 0.0)));
        s.ris.push(RisSpec::new(
            "r",
            Pose::at(Vec3::new(-10.0, 5.0, 0.0)),
            4,
            4,
            0.005,
        ));
        s.ues.push(UeSpec::new("u", Vec3::new(5.0, 3.0, 0.0)));
        s
    }

    fn exact_cfg() -> ProtocolConfig {
        ProtocolConfig {
            latency: LatencyModel {
                jitter_s: 0.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn pattern(t: &Transcript) -> Vec<(MessageKind, &str, &str)> {
        t.messages
            .iter()
            .map(|m| (m.kind, m.src.as_str(), m.dst.as_str()))
            .collect()
    }

    #[test]
    fn minimal_scene_follows_the_six_steps() {
        use MessageKind::*;
        let s = minimal();
        let t = run_ap_coordinated(&s, "u", &exact_cfg()).unwrap();
        let want = vec![
            (LasRequest, "u", "ap"),
            (CoreExchange, "ap", CORE),
            (CoreExchange, CORE, "ap"),
            (DeviceNotify, "ap", "b"),
            (DeviceNotify, "ap", "r"),
            (DeviceNotify, "ap", "u"),
            (ResourceGrant, "ap", "b"),
            (ProfileTrigger, "ap", "r"),
            (ResourceGrant, "ap", "u"),
            (RefSignal, "b", "u"),
            (ResultUpdate, "u", "ap"),
        ];
        assert_eq!(pattern(&t), want);
        assert_eq!(t.outcome, Outcome::Completed);
        assert_eq!(t.messages[9].via, vec!["r".to_string()]);
        assert!(validate_transcript(&t, Mode::ApCoordinated).is_empty());
        let coords: Vec<_> = t
            .nodes
            .iter()
            .filter(|n| n.role == Role::Coordinator)
            .collect();
        assert_eq!(coords.len(), 1);
        assert_eq!(coords[0].id, "ap");
    }

    #[test]
    fn offload_reports_measurements() {
        use MessageKind::*;
        let cfg = ProtocolConfig {
            offload: true,
            ..exact_cfg()
        };
        let t = run_ap_coordinated(&minimal(), "u", &cfg).unwrap();
        let tail: Vec<_> = pattern(&t).into_iter().rev().take(2).collect();
        assert_eq!(
            tail,
            vec![(ResultUpdate, "ap", "u"), (MeasurementReport, "u", "ap")]
        );
    }

    #[test]
    fn same_seed_same_transcript() {
        let s = minimal();
        let cfg = ProtocolConfig {
            seed: 9,
            ..Default::default()
        };
        let a = run_ap_coordinated(&s, "u", &cfg).unwrap();
        let b = run_ap_coordinated(&s, "u", &cfg).unwrap();
        assert_eq!(a.to_json_lines(), b.to_json_lines());
        let c = run_ap_coordinated(
            &s,
            "u",
            &ProtocolConfig {
                seed: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.to_json_lines(), c.to_json_lines());
    }

    #[test]
    fn ap_outage_after_step_two_times_out() {
        let cfg = ProtocolConfig {
            outage: Some(Outage {
                node: "ap".into(),
                after_step: 2,
            }),
            ..Default::default()
        };
        let t = run_ap_coordinated(&minimal(), "u", &cfg).unwrap();
        assert_eq!(t.outcome, Outcome::Failed(FailReason::Timeout));
        assert!(t.messages.iter().all(|m| m.kind.step() <= 2));
        let last = t.messages.last().unwrap().deliver_time;
        assert!(t.end_time >= last + cfg.latency.timeout_s);
        assert!(t.end_time <= last + cfg.latency.timeout_s + cfg.latency.guard());
    }

    #[test]
    fn partial_coverage_relays_target_traffic() {
        let mut s = minimal();
        s.aps[0].range = 12.0;
        s.ues[0].pose.position = Vec3::new(15.0, 0.0, 0.0);
        s.ues.push(UeSpec::new("v", Vec3::new(3.0, 0.0, 0.0)));
        s.sidelink_range = 20.0;
        assert_eq!(
            s.coverage_class("u").unwrap(),
            CoverageClass::PartialCoverage
        );
        assert_eq!(select_mode(&s, "u").unwrap(), Mode::ApCoordinated);
        let t = run_protocol(&s, "u", &exact_cfg()).unwrap();
        assert_eq!(t.outcome, Outcome::Completed);
        for m in &t.messages {
            let touches_target = m.origin == "u" || m.dst == "u";
            let touches_ap = m.origin == "ap" || m.dst == "ap";
            if touches_target && touches_ap && m.kind != MessageKind::RefSignal {
                assert!(m.src == "v" || m.dst == "v", "{m:?}");
            }
        }
        assert!(validate_transcript(&t, Mode::ApCoordinated).is_empty());
    }

    fn isolated() -> Scenario {
        let mut s = minimal();
        s.aps.clear();
        s
    }

    #[test]
    fn lone_capable_target_elects_itself() {
        let s = isolated();
        assert_eq!(select_mode(&s, "u").unwrap(), Mode::SelfCoordinated);
        let t = run_self_coordinated(&s, "u", &exact_cfg()).unwrap();
        assert_eq!(t.coordinator.as_deref(), Some("u"));
        assert_eq!(t.outcome, Outcome::Completed);
        assert!(validate_transcript(&t, Mode::SelfCoordinated).is_empty());
    }

    #[test]
    fn equal_scores_elect_lowest_id() {
        let mut s = isolated();
        s.ues[0].can_coordinate = false;
        for id in ["w", "v"] {
            let mut u = UeSpec::new(id, Vec3::new(6.0, 1.0, 0.0));
            u.compute_capability = 5;
            s.ues.push(u);
        }
        let t = run_self_coordinated(&s, "u", &exact_cfg()).unwrap();
        assert_eq!(t.coordinator.as_deref(), Some("v"));
        assert_eq!(t.outcome, Outcome::Completed);
        assert!(validate_transcript(&t, Mode::SelfCoordinated).is_empty());
        assert!(t
            .messages
            .iter()
            .any(|m| m.kind == MessageKind::CoordinatorNotify && m.dst == "v"));
    }

    #[test]
    fn isolated_incapable_target_has_no_coordinator() {
        let mut s = isolated();
        s.sidelink_range = 1.0;
        s.ues[0].can_coordinate = false;
        let t = run_self_coordinated(&s, "u", &exact_cfg()).unwrap();
        assert_eq!(t.outcome, Outcome::Failed(FailReason::NoCoordinator));
    }

    #[test]
    fn capable_target_without_anchors_cannot_measure() {
        let mut s = isolated();
        s.sidelink_range = 1.0;
        let t = run_self_coordinated(&s, "u", &exact_cfg()).unwrap();
        assert_eq!(t.coordinator.as_deref(), Some("u"));
        assert_eq!(t.outcome, Outcome::Failed(FailReason::NoAnchors));
    }

    #[test]
    fn mode_guards() {
        assert!(run_self_coordinated(&minimal(), "u", &exact_cfg()).is_err());
        assert!(run_ap_coordinated(&isolated(), "u", &exact_cfg()).is_err());
        assert_eq!(
            select_mode(&minimal(), "x"),
            Err(Error::UnknownEntity("x".into()))
        );
    }

    #[test]
    fn ref_before_trigger_is_one_violation() {
        let mut t = run_ap_coordinated(&minimal(), "u", &exact_cfg()).unwrap();
        let trig = t
            .messages
            .iter()
            .position(|m| m.kind == MessageKind::ProfileTrigger)
            .unwrap();
        t.messages.remove(trig);
        let v = validate_transcript(&t, Mode::ApCoordinated);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::RefBeforeTrigger { .. }));
    }

    #[test]
    fn lost_messages_end_in_timeout() {
        let cfg = ProtocolConfig {
            latency: LatencyModel {
                loss_probability: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let t = run_ap_coordinated(&minimal(), "u", &cfg).unwrap();
        assert_eq!(t.outcome, Outcome::Failed(FailReason::Timeout));
        assert!(t.messages.is_empty());
    }

    #[test]
    fn json_lines_round_trip() {
        let t = run_ap_coordinated(&minimal(), "u", &ProtocolConfig::default()).unwrap();
        let back: Vec<Message> = t
            .to_json_lines()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, t.messages);
    }
}
