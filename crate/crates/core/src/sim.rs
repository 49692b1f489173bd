//! Deterministic simulation: the network state of channels and internal
//! pools, a seeded scheduler interleaving all enabled events, trace
//! emission, and post-hoc property checking.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::attacker::{
    build_scripted, inject, AttackerState, InjectOutcome, InjectTarget, Injection, RandomGen,
    Strategy,
};
use crate::authseg::{auto_beacon, combine, construct_segment, AuthSet, PathPlan, SegmentKind};
use crate::packet::Packet;
use crate::properties::{check_all, Trace, TraceEvent, TraceMeta, ViolationReport};
use crate::router::{
    forward, recv, send, CheckFlags, Decision, DropReason, Port, RouterConfig, RouterState,
    SendOutcome,
};
use crate::scenario::{Scenario, SegmentSource};
use crate::terms::{CryptoBackend, KeyMaterial, NonceAlloc};
use crate::topology::{AsId, IfId, Topology};

/// World state: one packet pool per AS-internal network and one FIFO channel
/// per directed inter-AS link, keyed by the sending endpoint first.
#[derive(Clone, Debug, Default)]
pub struct NetworkState {
    pub int: BTreeMap<AsId, VecDeque<Packet>>,
    pub ext: BTreeMap<(AsId, IfId, AsId, IfId), VecDeque<Packet>>,
}

impl NetworkState {
    pub fn total_packets(&self) -> usize {
        self.int.values().map(|q| q.len()).sum::<usize>()
            + self.ext.values().map(|q| q.len()).sum::<usize>()
    }
}

/// How to resolve router check flags for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Every check enabled everywhere; the scenario's router section is
    /// ignored.
    Verified,
    /// The scenario's router configuration as written.
    Legacy,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Verified => write!(f, "verified"),
            RunMode::Legacy => write!(f, "legacy"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub mode: RunMode,
    pub seed: Option<u64>,
    pub concrete: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: RunMode::Legacy,
            seed: None,
            concrete: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("topology invalid: {0}")]
    Topology(String),
    #[error("explicit segment {0:?} cannot be resolved: {1}")]
    Segment(Vec<AsId>, String),
    #[error("flow references unknown segment {kind} {route:?}")]
    UnknownFlowSegment { kind: SegmentKind, route: Vec<AsId> },
    #[error("flow cannot be combined: {0}")]
    Combine(String),
    #[error("{0}")]
    Strategy(#[from] crate::attacker::StrategyError),
}

/// Result of one run: counters, the violation report, and the full trace.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: RunMode,
    pub backend: String,
    pub steps_executed: u64,
    pub injected: u64,
    pub accepted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub buffered: u64,
    pub drops: BTreeMap<String, u64>,
    pub violations: ViolationReport,
    pub trace: Trace,
    pub auth: AuthSet,
}

impl RunReport {
    /// Deterministic one-screen summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario={} seed={} mode={} backend={}\n",
            self.scenario, self.seed, self.mode, self.backend
        ));
        out.push_str(&format!(
            "steps={} injected={} accepted={} delivered={} dropped={} buffered={}\n",
            self.steps_executed,
            self.injected,
            self.accepted,
            self.delivered,
            self.dropped,
            self.buffered
        ));
        if self.drops.is_empty() {
            out.push_str("drops: -\n");
        } else {
            let items: Vec<String> = self
                .drops
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            out.push_str(&format!("drops: {}\n", items.join(" ")));
        }
        out.push_str(&format!(
            "violations: path_auth={} valley={} loop_weak={} loop_strong={}\n",
            self.violations.path_auth.len(),
            self.violations.valley.len(),
            self.violations.loop_weak.len(),
            self.violations.loop_strong.len()
        ));
        for v in self
            .violations
            .path_auth
            .iter()
            .chain(&self.violations.valley)
            .chain(&self.violations.loop_weak)
            .chain(&self.violations.loop_strong)
        {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn has_violations(&self) -> bool {
        !self.violations.is_empty()
    }

    /// Count accounting: every accepted packet is delivered, dropped, or
    /// still buffered.
    pub fn conserved(&self) -> bool {
        self.accepted == self.delivered + self.dropped + self.buffered
    }
}

enum AttackerRuntime {
    None,
    Scripted(VecDeque<Injection>),
    Random(RandomGen),
}

struct Flow {
    plan: PathPlan,
    remaining: u32,
}

/// One simulation run in progress.
pub struct Runner {
    topo: Topology,
    auth: AuthSet,
    routers: Vec<(RouterConfig, RouterState)>,
    net: NetworkState,
    attacker: AttackerState,
    attack: AttackerRuntime,
    flows: Vec<Flow>,
    backend: CryptoBackend,
    rng: ChaCha12Rng,
    next_tag: u64,
    steps: u64,
    trace: Trace,
    delivered: u64,
    dropped: u64,
    injected: u64,
    accepted: u64,
    drops: BTreeMap<String, u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Recv(usize, Port),
    Fwd(usize, Port),
    Send(usize, Port),
    Honest(usize),
    Attack,
}

fn resolve_flags(sc: &Scenario, mode: RunMode, as_id: &AsId) -> CheckFlags {
    match mode {
        RunMode::Verified => CheckFlags::verified(),
        RunMode::Legacy => sc
            .per_as_flags
            .get(as_id)
            .copied()
            .unwrap_or(sc.base_flags),
    }
}

fn resolve_segments(
    sc: &Scenario,
    alloc: &mut NonceAlloc,
) -> Result<AuthSet, SetupError> {
    match &sc.segments {
        SegmentSource::Auto { max_links } => Ok(auto_beacon(&sc.topology, *max_links, alloc)),
        SegmentSource::Explicit(list) => {
            let mut set = AuthSet::default();
            for (kind, route) in list {
                let follow = match kind {
                    SegmentKind::Core => crate::topology::LinkType::Core,
                    _ => crate::topology::LinkType::ProvCust,
                };
                let mut hops = Vec::new();
                for (k, a) in route.iter().enumerate() {
                    let next = if k + 1 < route.len() {
                        let b = &route[k + 1];
                        let candidates: Vec<IfId> = sc
                            .topology
                            .interfaces_of(a)
                            .into_iter()
                            .filter(|i| {
                                sc.topology.link_type(a, *i) == Some(follow)
                                    && sc
                                        .topology
                                        .neighbor(a, *i)
                                        .map(|(n, _)| &n == b)
                                        .unwrap_or(false)
                            })
                            .collect();
                        match candidates.as_slice() {
                            [one] => Some(*one),
                            [] => {
                                return Err(SetupError::Segment(
                                    route.clone(),
                                    format!("no {follow} link from {a} to {b}"),
                                ))
                            }
                            _ => {
                                return Err(SetupError::Segment(
                                    route.clone(),
                                    format!("ambiguous parallel links from {a} to {b}"),
                                ))
                            }
                        }
                    } else {
                        None
                    };
                    let prev = if k == 0 {
                        None
                    } else {
                        let b = &route[k - 1];
                        // the dual of the interface the previous hop chose
                        let prev_hop: &(AsId, Option<IfId>, Option<IfId>) = &hops[k - 1];
                        let i = prev_hop.2.expect("interior hop has an egress");
                        let (n, j) = sc.topology.neighbor(b, i).expect("validated link");
                        debug_assert_eq!(&n, a);
                        Some(j)
                    };
                    hops.push((a.clone(), prev, next));
                }
                let seg = construct_segment(&sc.topology, *kind, &hops, alloc.fresh())
                    .map_err(|e| SetupError::Segment(route.clone(), e.to_string()))?;
                set.segments.push(seg);
            }
            Ok(set)
        }
    }
}

impl Runner {
    pub fn new(sc: &Scenario, opts: &RunOptions) -> Result<Runner, SetupError> {
        let violations = sc.topology.validate();
        if !violations.is_empty() {
            return Err(SetupError::Topology(
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            ));
        }
        let seed = opts.seed.unwrap_or(sc.seed);
        let mut alloc = NonceAlloc::new();
        let auth = resolve_segments(sc, &mut alloc)?;

        let mut routers = Vec::new();
        for (as_id, _) in &sc.topology.ases {
            let flags = resolve_flags(sc, opts.mode, as_id);
            let groups: Vec<Vec<IfId>> = match sc.splits.get(as_id) {
                Some(gs) => gs.clone(),
                None => vec![sc.topology.interfaces_of(as_id)],
            };
            for g in groups {
                routers.push((
                    RouterConfig::new(as_id.clone(), g, flags),
                    RouterState::new(),
                ));
            }
        }

        let mut attacker = AttackerState::new(&sc.topology, &auth);
        let attack = match &sc.strategy {
            Strategy::None => AttackerRuntime::None,
            Strategy::Scripted(kind) => {
                let injections =
                    build_scripted(*kind, &sc.topology, &auth, &mut attacker, &mut alloc)?;
                AttackerRuntime::Scripted(injections.into())
            }
            Strategy::Random { budget } => {
                AttackerRuntime::Random(RandomGen::new(seed ^ 0x5eed_a77a, *budget))
            }
        };

        let mut rng = ChaCha12Rng::seed_from_u64(seed);

        // resolve declared flows, then add any seeded automatic ones
        let mut flows = Vec::new();
        for f in &sc.flows {
            let mut parts = Vec::new();
            for (role, route) in &f.legs {
                let stored_kind = match role {
                    SegmentKind::Core => SegmentKind::Core,
                    _ => SegmentKind::Down,
                };
                let seg = auth
                    .find(stored_kind, route)
                    .or_else(|| auth.find(SegmentKind::Up, route))
                    .ok_or_else(|| SetupError::UnknownFlowSegment {
                        kind: *role,
                        route: route.clone(),
                    })?;
                parts.push((*role, seg.clone()));
            }
            let plan = combine(&parts).map_err(|e| SetupError::Combine(e.to_string()))?;
            flows.push(Flow {
                plan,
                remaining: f.count,
            });
        }
        for _ in 0..sc.auto_flows {
            if let Some(plan) = random_plan(&auth, &mut rng) {
                flows.push(Flow {
                    plan,
                    remaining: rng.gen_range(1..=2),
                });
            }
        }

        let backend_label = if opts.concrete { "concrete" } else { "symbolic" };
        let backend = if opts.concrete {
            CryptoBackend::Concrete(KeyMaterial::derive(sc.topology.ases.keys().cloned()))
        } else {
            CryptoBackend::Symbolic
        };

        let trace = Trace {
            meta: TraceMeta {
                scenario: sc.name.clone(),
                seed,
                backend: backend_label.to_string(),
                mode: opts.mode.to_string(),
                compromised: sc.topology.compromised.clone(),
            },
            events: Vec::new(),
        };

        Ok(Runner {
            topo: sc.topology.clone(),
            auth,
            routers,
            net: NetworkState::default(),
            attacker,
            attack,
            flows,
            backend,
            rng,
            next_tag: 1,
            steps: sc.steps,
            trace,
            delivered: 0,
            dropped: 0,
            injected: 0,
            accepted: 0,
            drops: BTreeMap::new(),
        })
    }

    /// Replaces the attacker runtime with a fixed injection script, for
    /// callers that craft packets directly instead of going through a
    /// scenario strategy.
    pub fn with_scripted_injections(mut self, injections: Vec<Injection>) -> Self {
        self.attack = AttackerRuntime::Scripted(injections.into());
        self
    }

    /// Index of the router that should pick up the head of `int[as_id]`:
    /// the owner of the packet's egress interface, or the AS's first router
    /// when there is none. This idealizes intra-AS routing, which is not
    /// part of the modeled protocol.
    fn addressed_router(&self, as_id: &AsId) -> Option<usize> {
        let front = self.net.int.get(as_id)?.front()?;
        let own: Vec<usize> = self
            .routers
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| &c.as_id == as_id)
            .map(|(n, _)| n)
            .collect();
        if own.is_empty() {
            return None;
        }
        if let Some((_, _, Some(egress))) = front.current_hop() {
            for idx in &own {
                if self.routers[*idx].0.owns(egress) {
                    return Some(*idx);
                }
            }
        }
        Some(own[0])
    }

    fn enabled_events(&self) -> Vec<Ev> {
        let mut evs = Vec::new();
        // receives from external channels, owned interface side
        for ((_, _, b, j), q) in &self.net.ext {
            if q.is_empty() {
                continue;
            }
            for (idx, (cfg, _)) in self.routers.iter().enumerate() {
                if &cfg.as_id == b && cfg.owns(*j) {
                    evs.push(Ev::Recv(idx, Port::Ext(*j)));
                    break;
                }
            }
        }
        // receives from internal pools, addressed router only
        for (a, q) in &self.net.int {
            if !q.is_empty() {
                if let Some(idx) = self.addressed_router(a) {
                    evs.push(Ev::Recv(idx, Port::Internal));
                }
            }
        }
        for (idx, (_, rs)) in self.routers.iter().enumerate() {
            for p in rs.input_ports_with_packets() {
                evs.push(Ev::Fwd(idx, p));
            }
            for p in rs.output_ports_with_packets() {
                evs.push(Ev::Send(idx, p));
            }
        }
        for (idx, f) in self.flows.iter().enumerate() {
            if f.remaining > 0 {
                evs.push(Ev::Honest(idx));
            }
        }
        match &self.attack {
            AttackerRuntime::None => {}
            AttackerRuntime::Scripted(q) => {
                if !q.is_empty() {
                    evs.push(Ev::Attack);
                }
            }
            AttackerRuntime::Random(g) => {
                if !g.exhausted() {
                    evs.push(Ev::Attack);
                }
            }
        }
        evs
    }

    fn do_inject(&mut self, inj: &Injection, attacker: bool) {
        let tag = self.next_tag;
        self.next_tag += 1;
        let outcome = inject(&mut self.attacker, &mut self.net, inj, tag);
        self.injected += 1;
        if outcome == InjectOutcome::Accepted {
            self.accepted += 1;
        }
        self.trace.events.push(TraceEvent::Inject {
            tag,
            accepted: outcome == InjectOutcome::Accepted,
            attacker,
            target: inj.target.to_string(),
        });
    }

    fn execute(&mut self, ev: Ev) {
        match ev {
            Ev::Recv(idx, port) => {
                let (cfg, rs) = &mut self.routers[idx];
                if let Some(tag) = recv(cfg, &self.topo, rs, &mut self.net, port) {
                    self.trace.events.push(TraceEvent::Recv {
                        as_id: cfg.as_id.clone(),
                        src: port,
                        tag,
                    });
                }
            }
            Ev::Fwd(idx, port) => {
                let (cfg, rs) = &mut self.routers[idx];
                let Some(ev) = forward(cfg, &self.topo, &self.backend, rs, port) else {
                    return;
                };
                match ev.decision {
                    Decision::Forward { egress } => {
                        self.trace.events.push(TraceEvent::Forward {
                            as_id: cfg.as_id.clone(),
                            ingress: ev.ingress,
                            egress,
                            tag: ev.tag,
                            cursor_before: ev.cursor_before,
                            cursor_after: ev.cursor_after,
                            entry: ev.entry,
                        });
                    }
                    Decision::Deliver(_pkt) => {
                        self.delivered += 1;
                        self.trace.events.push(TraceEvent::Deliver {
                            as_id: cfg.as_id.clone(),
                            tag: ev.tag,
                        });
                    }
                    Decision::Drop { reason, pkt: _ } => {
                        self.dropped += 1;
                        *self.drops.entry(reason.to_string()).or_default() += 1;
                        self.trace.events.push(TraceEvent::Drop {
                            as_id: cfg.as_id.clone(),
                            ingress: ev.ingress,
                            tag: ev.tag,
                            reason,
                        });
                    }
                }
            }
            Ev::Send(idx, port) => {
                let (cfg, rs) = &mut self.routers[idx];
                let as_id = cfg.as_id.clone();
                match send(cfg, &self.topo, rs, &mut self.net, port) {
                    Some(SendOutcome::Sent { tag, to }) => {
                        // total eavesdropping: every channel entry is seen
                        let seen = match (&to, port) {
                            (Some((b, j)), Port::Ext(i)) => self
                                .net
                                .ext
                                .get(&(as_id.clone(), i, b.clone(), *j))
                                .and_then(|q| q.back())
                                .cloned(),
                            _ => self.net.int.get(&as_id).and_then(|q| q.back()).cloned(),
                        };
                        if let Some(p) = seen {
                            self.attacker.observe(&p);
                        }
                        self.trace.events.push(TraceEvent::Send {
                            as_id,
                            egress: port,
                            to,
                            tag,
                        });
                    }
                    Some(SendOutcome::NoLink { pkt }) => {
                        self.dropped += 1;
                        *self
                            .drops
                            .entry(DropReason::NoSuchLink.to_string())
                            .or_default() += 1;
                        self.trace.events.push(TraceEvent::Drop {
                            as_id,
                            ingress: port,
                            tag: pkt.tag,
                            reason: DropReason::NoSuchLink,
                        });
                    }
                    None => {}
                }
            }
            Ev::Honest(idx) => {
                self.flows[idx].remaining -= 1;
                let plan = self.flows[idx].plan.clone();
                let pkt = Packet::from_plan(&plan, Vec::new());
                let inj = Injection {
                    target: InjectTarget::Int(plan.source().clone()),
                    pkt,
                };
                self.do_inject(&inj, false);
            }
            Ev::Attack => {
                let inj = match &mut self.attack {
                    AttackerRuntime::None => None,
                    AttackerRuntime::Scripted(q) => q.pop_front(),
                    AttackerRuntime::Random(g) => {
                        g.next_injection(&self.attacker, &self.topo, &self.auth)
                    }
                };
                if let Some(inj) = inj {
                    self.do_inject(&inj, true);
                }
            }
        }
    }

    /// Runs the seeded scheduler until the step budget is exhausted or no
    /// event is enabled, then checks all properties over the trace.
    pub fn run(mut self) -> RunReport {
        let mut executed = 0u64;
        for _ in 0..self.steps {
            let evs = self.enabled_events();
            if evs.is_empty() {
                break;
            }
            let ev = evs[self.rng.gen_range(0..evs.len())];
            self.execute(ev);
            executed += 1;
        }
        let buffered = self.net.total_packets() as u64
            + self
                .routers
                .iter()
                .map(|(_, rs)| {
                    rs.input.values().map(|q| q.len()).sum::<usize>()
                        + rs.output.values().map(|q| q.len()).sum::<usize>()
                })
                .sum::<usize>() as u64;
        let violations = check_all(&self.trace, &self.auth);
        RunReport {
            scenario: self.trace.meta.scenario.clone(),
            seed: self.trace.meta.seed,
            mode: if self.trace.meta.mode == "verified" {
                RunMode::Verified
            } else {
                RunMode::Legacy
            },
            backend: self.trace.meta.backend.clone(),
            steps_executed: executed,
            injected: self.injected,
            accepted: self.accepted,
            delivered: self.delivered,
            dropped: self.dropped,
            buffered,
            drops: self.drops,
            violations,
            trace: self.trace,
            auth: self.auth,
        }
    }
}

/// Picks a small feasible combined path from the auth set: a down segment,
/// optionally preceded by an up segment sharing its core root.
fn random_plan(auth: &AuthSet, rng: &mut ChaCha12Rng) -> Option<PathPlan> {
    let downs: Vec<&crate::authseg::AuthSegment> = auth
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Down && s.hops.len() >= 2)
        .collect();
    if downs.is_empty() {
        return None;
    }
    let down = downs[rng.gen_range(0..downs.len())];
    let root = &down.hops[0].as_id;
    let ups: Vec<&crate::authseg::AuthSegment> = downs
        .iter()
        .copied()
        .filter(|s| &s.hops[0].as_id == root && s.route() != down.route())
        .collect();
    if !ups.is_empty() && rng.gen_bool(0.6) {
        let up = ups[rng.gen_range(0..ups.len())];
        combine(&[
            (SegmentKind::Up, up.clone()),
            (SegmentKind::Down, down.clone()),
        ])
        .ok()
    } else {
        combine(&[(SegmentKind::Down, down.clone())]).ok()
    }
}

/// Loads, runs, and checks a scenario under the given options.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunReport, SetupError> {
    Ok(Runner::new(sc, opts)?.run())
}

/// True when at least one honest sender lost a packet: accepted honest
/// injections must eventually deliver in an attacker-free verified run.
pub fn all_honest_delivered(report: &RunReport) -> bool {
    let honest: BTreeSet<u64> = report
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Inject {
                tag,
                accepted: true,
                attacker: false,
                ..
            } => Some(*tag),
            _ => None,
        })
        .collect();
    let delivered: BTreeSet<u64> = report
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Deliver { tag, .. } => Some(*tag),
            _ => None,
        })
        .collect();
    honest.is_subset(&delivered)
}
