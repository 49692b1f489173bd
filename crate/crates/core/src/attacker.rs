//! The symbolic adversary: global eavesdropping, knowledge accumulation,
//! derivability-guarded injection, and the scripted attack catalog.
//!
//! The attacker starts out knowing the public network structure, every
//! authorized segment including its identifier chain, and the secret keys of
//! the compromised ASes. Every packet that enters a channel is observed.
//! Injections go anywhere but must be derivable from current knowledge;
//! honest senders are modeled as injections of combined-path packets, which
//! are always derivable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::authseg::{AuthSegment, AuthSet, SegmentKind};
use crate::packet::{Packet, PacketSegment, SwitchMark};
use crate::sim::NetworkState;
use crate::terms::{tup, DyEngine, Knowledge, NonceAlloc, Term};
use crate::topology::{AsId, IfId, LinkType, Topology};

/// Term encoding of an authorized segment as disseminated by the control
/// plane: hop fields in clear plus the identifier chain.
pub fn segment_term(seg: &AuthSegment) -> Term {
    tup(vec![
        tup(seg
            .hops
            .iter()
            .map(|h| {
                tup(vec![
                    Term::AsLit(h.as_id.clone()),
                    Term::IfLit(h.prev),
                    Term::IfLit(h.next),
                    h.auth.clone(),
                ])
            })
            .collect()),
        tup(seg.beta.clone()),
    ])
}

/// Attacker knowledge plus the incremental derivability engine and a pool
/// of recently observed packets used as mutation templates.
#[derive(Clone, Debug)]
pub struct AttackerState {
    pub knowledge: Knowledge,
    engine: DyEngine,
    observed: Vec<Packet>,
    observed_count: usize,
}

const OBSERVED_POOL: usize = 32;

impl AttackerState {
    pub fn new(topo: &Topology, auth: &AuthSet) -> Self {
        let mut s = AttackerState {
            knowledge: Knowledge::new(),
            engine: DyEngine::new(),
            observed: Vec::new(),
            observed_count: 0,
        };
        // public structure
        for a in topo.ases.keys() {
            s.learn_term(Term::AsLit(a.clone()));
        }
        s.learn_term(Term::IfLit(None));
        for (a, i) in topo.links.keys() {
            let _ = a;
            s.learn_term(Term::IfLit(Some(*i)));
        }
        // compromised keys
        for c in &topo.compromised {
            s.learn_term(Term::Key(c.clone()));
        }
        // every authorized segment
        for seg in &auth.segments {
            s.learn_term(segment_term(seg));
        }
        s
    }

    /// Adds a term to the knowledge, splitting tuples like [`Knowledge`].
    pub fn learn_term(&mut self, t: Term) {
        match t {
            Term::Tup(es) => {
                for e in es {
                    self.learn_term(e);
                }
            }
            Term::Zero => {}
            atom => {
                if !self.knowledge.contains(&atom) {
                    self.engine.learn(&atom);
                    self.knowledge.learn(atom);
                }
            }
        }
    }

    /// Eavesdrops a packet: its full term encoding enters the knowledge and
    /// the packet joins the mutation template pool.
    pub fn observe(&mut self, pkt: &Packet) {
        self.learn_term(pkt.encode());
        if self.observed.len() < OBSERVED_POOL {
            self.observed.push(pkt.clone());
        } else {
            self.observed[self.observed_count % OBSERVED_POOL] = pkt.clone();
        }
        self.observed_count += 1;
    }

    /// Allocates a fresh attacker-owned value.
    pub fn fresh_nonce(&mut self, alloc: &mut NonceAlloc) -> Term {
        let n = alloc.fresh();
        self.learn_term(n.clone());
        n
    }

    pub fn derivable(&mut self, t: &Term) -> bool {
        self.engine.query(t)
    }

    pub fn observed_pool(&self) -> &[Packet] {
        &self.observed
    }
}

/// Where an injection lands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InjectTarget {
    /// The internal network of an AS.
    Int(AsId),
    /// The directed channel from `(a, i)` to `(b, j)`.
    Ext(AsId, IfId, AsId, IfId),
}

impl std::fmt::Display for InjectTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InjectTarget::Int(a) => write!(f, "int:{a}"),
            InjectTarget::Ext(a, i, b, j) => write!(f, "ext:{a}:{i}>{b}:{j}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Injection {
    pub target: InjectTarget,
    pub pkt: Packet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InjectOutcome {
    Accepted,
    NotDerivable,
}

/// Injects a packet if its encoding is derivable from current knowledge.
/// Accepted packets start with a fresh tag and empty ghost history and are
/// immediately observed (they entered a channel).
pub fn inject(
    att: &mut AttackerState,
    net: &mut NetworkState,
    inj: &Injection,
    tag: u64,
) -> InjectOutcome {
    let mut pkt = inj.pkt.clone();
    pkt.tag = tag;
    pkt.history.clear();
    pkt.pending_switch = SwitchMark::None;
    if !att.derivable(&pkt.encode()) {
        return InjectOutcome::NotDerivable;
    }
    att.observe(&pkt);
    match &inj.target {
        InjectTarget::Int(a) => net.int.entry(a.clone()).or_default().push_back(pkt),
        InjectTarget::Ext(a, i, b, j) => net
            .ext
            .entry((a.clone(), *i, b.clone(), *j))
            .or_default()
            .push_back(pkt),
    }
    InjectOutcome::Accepted
}

/// Attacker behavior over a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    None,
    Scripted(ScriptedKind),
    Random { budget: u32 },
}

/// The protocol attacks from the historical record, as reusable scripts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScriptedKind {
    /// Join a valid up-segment run to a mid-segment suffix of an unrelated
    /// segment through an unchecked segment switch.
    Splice,
    /// Reflect traffic up and down the same segment until a link repeats.
    Loop,
    /// Chain more than three segment fragments into an arbitrary route.
    SourceRoute,
    /// Advance the hop cursor over forged hop fields via the legacy
    /// verify-only marking.
    VerifyOnly,
}

impl ScriptedKind {
    pub fn name(self) -> &'static str {
        match self {
            ScriptedKind::Splice => "splice",
            ScriptedKind::Loop => "loop",
            ScriptedKind::SourceRoute => "source_route",
            ScriptedKind::VerifyOnly => "verify_only",
        }
    }
}

/// The catalog of scripted strategies.
pub fn scripted_attacks() -> Vec<ScriptedKind> {
    vec![
        ScriptedKind::Splice,
        ScriptedKind::Loop,
        ScriptedKind::SourceRoute,
        ScriptedKind::VerifyOnly,
    ]
}

#[derive(Debug, Error)]
#[error("strategy {strategy} not applicable: {reason}")]
pub struct StrategyError {
    pub strategy: &'static str,
    pub reason: String,
}

fn err(strategy: &'static str, reason: impl Into<String>) -> StrategyError {
    StrategyError {
        strategy,
        reason: reason.into(),
    }
}

fn fresh_packet(segments: Vec<PacketSegment>) -> Packet {
    Packet {
        segments,
        curr_seg: 0,
        curr_hf: 0,
        payload: Vec::new(),
        tag: 0,
        history: Vec::new(),
        pending_switch: SwitchMark::None,
    }
}

fn whole(seg: &AuthSegment, dir: bool) -> PacketSegment {
    PacketSegment {
        dir,
        verify_only: false,
        segid: if dir {
            seg.initial_segid().clone()
        } else {
            seg.final_segid().clone()
        },
        hops: seg.hops.clone(),
    }
}

/// Forward-direction suffix fragment of a segment starting at construction
/// position `p`, with the matching mid-chain identifier.
fn suffix(seg: &AuthSegment, p: usize) -> PacketSegment {
    PacketSegment {
        dir: true,
        verify_only: false,
        segid: seg.beta[p].clone(),
        hops: seg.hops[p..].to_vec(),
    }
}

/// Builds the injection list for a scripted attack against the given
/// network, or reports why the topology cannot host it. Fresh values the
/// attack mints become attacker knowledge, so the injections pass their own
/// derivability guard.
pub fn build_scripted(
    kind: ScriptedKind,
    topo: &Topology,
    auth: &AuthSet,
    att: &mut AttackerState,
    alloc: &mut NonceAlloc,
) -> Result<Vec<Injection>, StrategyError> {
    match kind {
        ScriptedKind::Splice => {
            // an up run ending at core root c, continued by a suffix of a
            // segment that merely passes through c
            for s1 in auth.segments.iter().filter(|s| {
                s.kind == SegmentKind::Down && s.hops.len() >= 2
            }) {
                let c = &s1.hops[0].as_id;
                for s2 in &auth.segments {
                    for p in 1..s2.hops.len().saturating_sub(1) {
                        if &s2.hops[p].as_id == c {
                            let pkt = fresh_packet(vec![whole(s1, false), suffix(s2, p)]);
                            let leaf = s1.hops.last().unwrap().as_id.clone();
                            return Ok(vec![Injection {
                                target: InjectTarget::Int(leaf),
                                pkt,
                            }]);
                        }
                    }
                }
            }
            Err(err(
                "splice",
                "no authorized segment passes through the core root of an up segment",
            ))
        }
        ScriptedKind::Loop => {
            let s = auth
                .segments
                .iter()
                .filter(|s| s.kind == SegmentKind::Down && s.hops.len() >= 2)
                .max_by_key(|s| s.hops.len())
                .ok_or_else(|| err("loop", "no multi-hop down segment to reflect over"))?;
            let pkt = fresh_packet(vec![
                whole(s, false),
                whole(s, true),
                whole(s, false),
                whole(s, true),
            ]);
            let leaf = s.hops.last().unwrap().as_id.clone();
            Ok(vec![Injection {
                target: InjectTarget::Int(leaf),
                pkt,
            }])
        }
        ScriptedKind::SourceRoute => {
            // up leg, then core suffix fragments entered mid-segment
            // (invalid joints), then a down leg: four segments total
            let s1 = auth
                .segments
                .iter()
                .find(|s| s.kind == SegmentKind::Down && s.hops.len() >= 2)
                .ok_or_else(|| err("source_route", "no up segment available"))?;
            let mut legs = vec![whole(s1, false)];
            let mut at = s1.hops[0].as_id.clone();
            for _ in 0..2 {
                // prefer an interior entry point so the fragment travels
                let frag = auth
                    .segments
                    .iter()
                    .filter(|s| s.kind == SegmentKind::Core)
                    .flat_map(|s| (1..s.hops.len()).map(move |p| (s, p)))
                    .filter(|(s, p)| s.hops[*p].as_id == at)
                    .max_by_key(|(s, p)| s.hops.len() - p)
                    .ok_or_else(|| {
                        err(
                            "source_route",
                            format!("no core segment passes through {at}"),
                        )
                    })?;
                let (s, p) = frag;
                at = s.hops.last().unwrap().as_id.clone();
                legs.push(suffix(s, p));
            }
            let s_down = auth
                .segments
                .iter()
                .find(|s| {
                    s.kind == SegmentKind::Down && s.hops.len() >= 2 && s.hops[0].as_id == at
                })
                .ok_or_else(|| err("source_route", format!("no down segment rooted at {at}")))?;
            legs.push(whole(s_down, true));
            let pkt = fresh_packet(legs);
            let leaf = s1.hops.last().unwrap().as_id.clone();
            Ok(vec![Injection {
                target: InjectTarget::Int(leaf),
                pkt,
            }])
        }
        ScriptedKind::VerifyOnly => {
            // forge a straight path through a valley AS between two of its
            // providers, with garbage authenticators under a verify-only
            // marking
            let valley = topo
                .ases
                .keys()
                .find_map(|v| {
                    let provider_ifs: Vec<IfId> = topo
                        .interfaces_of(v)
                        .into_iter()
                        .filter(|i| topo.link_type(v, *i) == Some(LinkType::CustProv))
                        .collect();
                    if provider_ifs.len() >= 2 {
                        Some((v.clone(), provider_ifs[0], provider_ifs[1]))
                    } else {
                        None
                    }
                })
                .ok_or_else(|| err("verify_only", "no AS with two providers"))?;
            let (v, via1, via2) = valley;
            let (p1, p1_if) = topo.neighbor(&v, via1).unwrap();
            let (p2, p2_if) = topo.neighbor(&v, via2).unwrap();
            let hops = vec![
                crate::authseg::HopField {
                    as_id: p1.clone(),
                    prev: None,
                    next: Some(p1_if),
                    auth: att.fresh_nonce(alloc),
                },
                crate::authseg::HopField {
                    as_id: v,
                    prev: Some(via1),
                    next: Some(via2),
                    auth: att.fresh_nonce(alloc),
                },
                crate::authseg::HopField {
                    as_id: p2,
                    prev: Some(p2_if),
                    next: None,
                    auth: att.fresh_nonce(alloc),
                },
            ];
            let pkt = fresh_packet(vec![PacketSegment {
                dir: true,
                verify_only: true,
                segid: att.fresh_nonce(alloc),
                hops,
            }]);
            Ok(vec![Injection {
                target: InjectTarget::Int(p1),
                pkt,
            }])
        }
    }
}

/// Seeded generator of structured random injections: templates drawn from
/// authorized material and observed packets, bent by small mutations, all of
/// which stay inside the derivability guard by construction.
#[derive(Clone, Debug)]
pub struct RandomGen {
    rng: ChaCha12Rng,
    remaining: u32,
}

impl RandomGen {
    pub fn new(seed: u64, budget: u32) -> Self {
        RandomGen {
            rng: ChaCha12Rng::seed_from_u64(seed),
            remaining: budget,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.remaining == 0
    }

    pub fn next_injection(
        &mut self,
        att: &AttackerState,
        topo: &Topology,
        auth: &AuthSet,
    ) -> Option<Injection> {
        if self.remaining == 0 || auth.is_empty() {
            return None;
        }
        self.remaining -= 1;
        let rng = &mut self.rng;

        // template
        let mut pkt = if !att.observed_pool().is_empty() && rng.gen_bool(0.5) {
            let pool = att.observed_pool();
            pool[rng.gen_range(0..pool.len())].clone()
        } else {
            let n = rng.gen_range(1..=3usize);
            let segs = (0..n)
                .map(|_| {
                    let s = &auth.segments[rng.gen_range(0..auth.len())];
                    let dir = match s.kind {
                        SegmentKind::Core => rng.gen_bool(0.5),
                        _ => rng.gen_bool(0.7),
                    };
                    whole(s, dir)
                })
                .collect();
            fresh_packet(segs)
        };

        // mutations
        for _ in 0..rng.gen_range(0..=2usize) {
            let si = rng.gen_range(0..pkt.segments.len());
            match rng.gen_range(0..6) {
                0 => {
                    // cursor perturbation
                    pkt.curr_seg = si;
                    let n = pkt.segments[si].hops.len();
                    pkt.curr_hf = rng.gen_range(0..=n);
                }
                1 => {
                    // hop reordering
                    let s = &mut pkt.segments[si];
                    if s.hops.len() >= 2 {
                        let a = rng.gen_range(0..s.hops.len());
                        let b = rng.gen_range(0..s.hops.len());
                        s.hops.swap(a, b);
                    }
                }
                2 => {
                    // sigma swapping across the packet
                    let flat: Vec<(usize, usize)> = pkt
                        .segments
                        .iter()
                        .enumerate()
                        .flat_map(|(si, s)| (0..s.hops.len()).map(move |hi| (si, hi)))
                        .collect();
                    if flat.len() >= 2 {
                        let a = flat[rng.gen_range(0..flat.len())];
                        let b = flat[rng.gen_range(0..flat.len())];
                        let tmp = pkt.segments[a.0].hops[a.1].auth.clone();
                        pkt.segments[a.0].hops[a.1].auth =
                            pkt.segments[b.0].hops[b.1].auth.clone();
                        pkt.segments[b.0].hops[b.1].auth = tmp;
                    }
                }
                3 => {
                    // segment identifier perturbation by a known term
                    let k = att.knowledge.len();
                    if k > 0 {
                        let atom = att
                            .knowledge
                            .iter()
                            .nth(rng.gen_range(0..k))
                            .cloned()
                            .unwrap();
                        let s = &mut pkt.segments[si];
                        s.segid = crate::terms::xor(s.segid.clone(), atom);
                    }
                }
                4 => {
                    // truncation to a fragment
                    let s = &mut pkt.segments[si];
                    if s.hops.len() >= 2 {
                        if rng.gen_bool(0.5) {
                            s.hops.pop();
                        } else {
                            s.hops.remove(0);
                        }
                    }
                }
                _ => {
                    // direction flip
                    pkt.segments[si].dir = !pkt.segments[si].dir;
                }
            }
        }

        // target
        let target = match rng.gen_range(0..3) {
            0 => {
                let at = pkt
                    .current_hop()
                    .map(|(h, _, _)| h.as_id.clone())
                    .unwrap_or_else(|| topo.ases.keys().next().unwrap().clone());
                InjectTarget::Int(at)
            }
            1 => {
                let ases: Vec<&AsId> = topo.ases.keys().collect();
                InjectTarget::Int(ases[rng.gen_range(0..ases.len())].clone())
            }
            _ => {
                let links: Vec<_> = topo.links.iter().collect();
                let ((a, i), (b, j)) = links[rng.gen_range(0..links.len())];
                InjectTarget::Ext(a.clone(), *i, b.clone(), *j)
            }
        };
        Some(Injection { target, pkt })
    }
}
