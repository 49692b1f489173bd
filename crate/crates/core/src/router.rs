//! The forwarding engine.
//!
//! Forwarding is decomposed into receive, forward, and send steps over
//! per-router input and output buffers; their composition behaves like one
//! monolithic forwarding event. The forward step evaluates guards in a fixed
//! order (structural, segment count, interface validity, cryptographic
//! validity, valley check), so drop reasons are deterministic. Individual
//! checks can be switched off per scenario to reproduce historical protocol
//! attacks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::packet::{AbstractPacket, HistoryEntry, Packet};
use crate::sim::NetworkState;
use crate::terms::{concretize, mac, mac6, xor, xor6, CryptoBackend, Term};
use crate::topology::{AsId, Endpoint, IfId, LinkType, Topology};

/// Per-check switches. All on is "verified mode"; attacks from the
/// historical record are reproduced by disabling exactly the checks whose
/// absence enabled them. Rejection of internal-to-internal forwarding is a
/// separate implementation-bug flag and stays on even in legacy modes unless
/// explicitly lifted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckFlags {
    pub segment_switch_checks: bool,
    pub enforce_max_segments: bool,
    pub intra_segment_valley_check: bool,
    pub verify_only_handling: bool,
    pub allow_internal_to_internal: bool,
}

impl CheckFlags {
    pub fn verified() -> Self {
        CheckFlags {
            segment_switch_checks: true,
            enforce_max_segments: true,
            intra_segment_valley_check: true,
            verify_only_handling: true,
            allow_internal_to_internal: false,
        }
    }

    pub fn all_off() -> Self {
        CheckFlags {
            segment_switch_checks: false,
            enforce_max_segments: false,
            intra_segment_valley_check: false,
            verify_only_handling: false,
            allow_internal_to_internal: false,
        }
    }
}

impl Default for CheckFlags {
    fn default() -> Self {
        Self::verified()
    }
}

/// One router instance: the AS it belongs to, the inter-AS interfaces it
/// owns, its MAC key, and the active checks. By default an AS runs a single
/// router owning all of its interfaces; splitting interfaces across several
/// routers exercises intra-AS hand-off through the internal network.
#[derive(Clone, Debug)]
pub struct RouterConfig {
    pub as_id: AsId,
    pub owned_interfaces: BTreeSet<IfId>,
    pub key: Term,
    pub checks: CheckFlags,
}

impl RouterConfig {
    pub fn new(as_id: AsId, owned: impl IntoIterator<Item = IfId>, checks: CheckFlags) -> Self {
        let key = Term::Key(as_id.clone());
        RouterConfig {
            as_id,
            owned_interfaces: owned.into_iter().collect(),
            key,
            checks,
        }
    }

    pub fn owns(&self, i: IfId) -> bool {
        self.owned_interfaces.contains(&i)
    }
}

/// Buffer selector: an external interface or the AS-internal network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Port {
    Internal,
    Ext(IfId),
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Port::Internal => write!(f, "int"),
            Port::Ext(i) => write!(f, "{i}"),
        }
    }
}

/// Why a packet was discarded; the first failing guard wins.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum DropReason {
    NoHopField,
    IfaceMismatch,
    CryptoInvalid,
    BadSegmentSwitch,
    TooManySegments,
    ValleyViolation,
    NoSuchLink,
    InternalToInternal,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Outcome of one forward step.
#[derive(Clone, Debug)]
pub enum Decision {
    /// Guards passed; the packet sits in the output buffer for `egress`.
    Forward { egress: Port },
    /// The packet reached its destination AS and left the data plane.
    Deliver(Packet),
    /// A guard failed; the packet is discarded.
    Drop { reason: DropReason, pkt: Packet },
}

/// FIFO input and output buffers of one router.
#[derive(Clone, Debug, Default)]
pub struct RouterState {
    pub input: BTreeMap<Port, VecDeque<Packet>>,
    pub output: BTreeMap<Port, VecDeque<Packet>>,
}

impl RouterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input_ports_with_packets(&self) -> Vec<Port> {
        self.input
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn output_ports_with_packets(&self) -> Vec<Port> {
        self.output
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Moves one packet from the network channel feeding `src` into the input
/// buffer. No-op when the channel is empty.
pub fn recv(
    cfg: &RouterConfig,
    topo: &Topology,
    rs: &mut RouterState,
    net: &mut NetworkState,
    src: Port,
) -> Option<u64> {
    let pkt = match src {
        Port::Internal => net.int.get_mut(&cfg.as_id)?.pop_front()?,
        Port::Ext(i) => {
            // the channel is keyed by its sending side
            let (b, j) = topo.neighbor(&cfg.as_id, i)?;
            net.ext
                .get_mut(&(b, j, cfg.as_id.clone(), i))?
                .pop_front()?
        }
    };
    let tag = pkt.tag;
    rs.input.entry(src).or_default().push_back(pkt);
    Some(tag)
}

/// How the packet came into the AS for segment-switch classification.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Arrival {
    /// Injected locally or already handed off; unconstrained.
    Local,
    FromCustomer,
    FromCore,
    FromProvider,
}

fn classify_arrival(cfg: &RouterConfig, topo: &Topology, ingress: Port) -> Arrival {
    match ingress {
        Port::Internal => Arrival::Local,
        Port::Ext(i) => match topo.link_type(&cfg.as_id, i) {
            Some(LinkType::ProvCust) => Arrival::FromCustomer,
            Some(LinkType::Core) => Arrival::FromCore,
            Some(LinkType::CustProv) => Arrival::FromProvider,
            None => Arrival::Local,
        },
    }
}

/// Interface validity of the current hop field for the given ingress and
/// intended egress (`None` means deliver or segment switch). Returns the
/// failing guard instead of a bare boolean so the forward step can report
/// deterministic drop reasons.
pub fn ifs_check(
    cfg: &RouterConfig,
    topo: &Topology,
    pkt: &Packet,
    ingress: Port,
    egress: Option<Port>,
) -> Result<(), DropReason> {
    let (h, t_in, t_eg) = pkt.current_hop().ok_or(DropReason::NoHopField)?;

    // (a) egress must match the hop field's traversal egress
    match egress {
        Some(Port::Ext(j)) => {
            if t_eg != Some(j) {
                return Err(DropReason::IfaceMismatch);
            }
        }
        Some(Port::Internal) => match t_eg {
            // hand-off toward a sibling router's interface
            Some(i) if !cfg.owns(i) => {}
            _ => return Err(DropReason::IfaceMismatch),
        },
        None => {
            if t_eg.is_some() {
                return Err(DropReason::IfaceMismatch);
            }
        }
    }

    // (b) externally received packets must enter through the hop's ingress
    // interface of this AS
    if let Port::Ext(i) = ingress {
        if t_in != Some(i) || h.as_id != cfg.as_id {
            return Err(DropReason::IfaceMismatch);
        }
    }

    // (c) internal to internal is rejected
    if ingress == Port::Internal
        && egress == Some(Port::Internal)
        && !cfg.checks.allow_internal_to_internal
    {
        return Err(DropReason::InternalToInternal);
    }

    // (d) segment switch conditions
    if pkt.at_segment_end() && pkt.more_segments() && cfg.checks.segment_switch_checks {
        if t_eg.is_some() {
            return Err(DropReason::BadSegmentSwitch);
        }
        let next = &pkt.segments[pkt.curr_seg + 1];
        let (nh, n_in, n_eg) = next
            .traversal_hop(0)
            .ok_or(DropReason::BadSegmentSwitch)?;
        if n_in.is_some() || nh.as_id != cfg.as_id {
            return Err(DropReason::BadSegmentSwitch);
        }
        // the next leg must continue down the hierarchy: after coming up
        // from a customer anything but a further ascent is fine, after a
        // core link only a descent is, and after coming down from a
        // provider the path must not continue at all
        let arrival = classify_arrival(cfg, topo, ingress);
        let next_type = n_eg.and_then(|j| topo.link_type(&cfg.as_id, j));
        let ok = match arrival {
            Arrival::Local | Arrival::FromCustomer => next_type != Some(LinkType::CustProv),
            Arrival::FromCore => matches!(next_type, Some(LinkType::ProvCust) | None),
            Arrival::FromProvider => false,
        };
        if !ok {
            return Err(DropReason::BadSegmentSwitch);
        }
    }
    Ok(())
}

pub fn ifs_valid(
    cfg: &RouterConfig,
    topo: &Topology,
    pkt: &Packet,
    ingress: Port,
    egress: Option<Port>,
) -> bool {
    ifs_check(cfg, topo, pkt, ingress, egress).is_ok()
}

/// Cryptographic validity of the current hop field. In construction
/// direction the authenticator must recompute over the current segment
/// identifier; against construction direction the identifier is first
/// restored by XORing the authenticator back out.
pub fn crypto_valid(cfg: &RouterConfig, backend: &CryptoBackend, pkt: &Packet) -> bool {
    let Some((h, _, _)) = pkt.current_hop() else {
        return false;
    };
    let seg = pkt.current_segment().unwrap();
    match backend {
        CryptoBackend::Symbolic => {
            let body_beta = if seg.dir {
                seg.segid.clone()
            } else {
                xor(seg.segid.clone(), h.auth.clone())
            };
            h.auth
                == mac(
                    cfg.key.clone(),
                    vec![Term::IfLit(h.prev), Term::IfLit(h.next), body_beta],
                )
        }
        CryptoBackend::Concrete(km) => {
            let (Ok(sigma), Ok(segid)) = (concretize(&h.auth, km), concretize(&seg.segid, km))
            else {
                return false;
            };
            let Ok(key) = km.key_bytes(&cfg.as_id) else {
                return false;
            };
            let beta = if seg.dir { segid } else { xor6(segid, sigma) };
            let prev = concretize(&Term::IfLit(h.prev), km).unwrap();
            let next = concretize(&Term::IfLit(h.next), km).unwrap();
            sigma == mac6(&key, &[prev, next, beta])
        }
    }
}

/// Consumes the current hop field: folds its authenticator into the segment
/// identifier, advances the cursor, performs the segment switch when the
/// segment is exhausted, and appends the ghost history entry when the packet
/// leaves over an external interface.
pub fn upd(cfg: &RouterConfig, topo: &Topology, pkt: &mut Packet, external_egress: Option<IfId>) {
    let (h, _, t_eg) = match pkt.current_hop() {
        Some(x) => (x.0.clone(), x.1, x.2),
        None => return,
    };
    let seg = &mut pkt.segments[pkt.curr_seg];
    seg.segid = xor(seg.segid.clone(), h.auth.clone());
    if let Some(i) = external_egress {
        let to = topo
            .neighbor(&cfg.as_id, i)
            .expect("egress link checked before upd");
        let ltype = topo.link_type(&cfg.as_id, i).expect("linked egress");
        let pre_switch = std::mem::take(&mut pkt.pending_switch);
        pkt.history.push(HistoryEntry {
            from: (cfg.as_id.clone(), i),
            to,
            ltype,
            seg: pkt.curr_seg,
            pre_switch,
        });
    }
    pkt.curr_hf += 1;
    if pkt.curr_hf >= pkt.segments[pkt.curr_seg].hops.len() && pkt.more_segments() {
        // ghost joint bookkeeping happens regardless of check flags
        let joint_valid = t_eg.is_none()
            && pkt.segments[pkt.curr_seg + 1]
                .traversal_hop(0)
                .map(|(nh, n_in, _)| n_in.is_none() && nh.as_id == cfg.as_id)
                .unwrap_or(false);
        pkt.pending_switch = pkt.pending_switch.merge(joint_valid);
        pkt.curr_seg += 1;
        pkt.curr_hf = 0;
    }
}

fn dirs_monotone(pkt: &Packet) -> bool {
    let mut seen_forward = false;
    for s in &pkt.segments {
        if s.dir {
            seen_forward = true;
        } else if seen_forward {
            return false;
        }
    }
    true
}

/// Everything one forward step did, for trace emission.
#[derive(Clone, Debug)]
pub struct ForwardEvent {
    pub tag: u64,
    pub ingress: Port,
    pub cursor_before: (usize, usize),
    pub cursor_after: (usize, usize),
    pub entry: Option<HistoryEntry>,
    pub decision: Decision,
}

enum Intent {
    Deliver,
    Continue,
    Handoff,
    External(IfId),
}

/// Pops one packet from the `ingress` input buffer, evaluates the guards,
/// and either queues the packet on an output buffer, delivers it, or drops
/// it. Returns `None` when the buffer is empty.
pub fn forward(
    cfg: &RouterConfig,
    topo: &Topology,
    backend: &CryptoBackend,
    rs: &mut RouterState,
    ingress: Port,
) -> Option<ForwardEvent> {
    let mut pkt = rs.input.get_mut(&ingress)?.pop_front()?;
    let tag = pkt.tag;
    let cursor_before = (pkt.curr_seg, pkt.curr_hf);
    let done = |decision: Decision, pkt: &Packet, entry: Option<HistoryEntry>| ForwardEvent {
        tag,
        ingress,
        cursor_before,
        cursor_after: (pkt.curr_seg, pkt.curr_hf),
        entry,
        decision,
    };

    let Some((_, _, t_eg)) = pkt.current_hop() else {
        return Some(done(
            Decision::Drop {
                reason: DropReason::NoHopField,
                pkt: pkt.clone(),
            },
            &pkt,
            None,
        ));
    };

    // legacy verify-only handling: flagged segments advance without
    // validation
    let bypass = !cfg.checks.verify_only_handling && pkt.current_segment().unwrap().verify_only;

    if cfg.checks.enforce_max_segments && (pkt.segments.len() > 3 || !dirs_monotone(&pkt)) {
        return Some(done(
            Decision::Drop {
                reason: DropReason::TooManySegments,
                pkt: pkt.clone(),
            },
            &pkt,
            None,
        ));
    }

    let intent = match t_eg {
        None => {
            if pkt.at_segment_end() && !pkt.more_segments() {
                Intent::Deliver
            } else {
                Intent::Continue
            }
        }
        Some(i) => {
            if topo.neighbor(&cfg.as_id, i).is_none() {
                return Some(done(
                    Decision::Drop {
                        reason: DropReason::NoSuchLink,
                        pkt: pkt.clone(),
                    },
                    &pkt,
                    None,
                ));
            } else if cfg.owns(i) {
                Intent::External(i)
            } else {
                Intent::Handoff
            }
        }
    };
    let egress_port = match intent {
        Intent::Deliver | Intent::Continue => None,
        Intent::Handoff => Some(Port::Internal),
        Intent::External(i) => Some(Port::Ext(i)),
    };

    // internal-to-internal rejection stays active even for verify-only
    // segments
    if ingress == Port::Internal
        && egress_port == Some(Port::Internal)
        && !cfg.checks.allow_internal_to_internal
    {
        return Some(done(
            Decision::Drop {
                reason: DropReason::InternalToInternal,
                pkt: pkt.clone(),
            },
            &pkt,
            None,
        ));
    }

    if !bypass {
        if let Err(reason) = ifs_check(cfg, topo, &pkt, ingress, egress_port) {
            return Some(done(
                Decision::Drop {
                    reason,
                    pkt: pkt.clone(),
                },
                &pkt,
                None,
            ));
        }
        if !crypto_valid(cfg, backend, &pkt) {
            return Some(done(
                Decision::Drop {
                    reason: DropReason::CryptoInvalid,
                    pkt: pkt.clone(),
                },
                &pkt,
                None,
            ));
        }
        if let Intent::External(i) = intent {
            if cfg.checks.intra_segment_valley_check
                && topo.link_type(&cfg.as_id, i) == Some(LinkType::CustProv)
                && pkt.history.iter().any(|e| e.ltype == LinkType::ProvCust)
            {
                return Some(done(
                    Decision::Drop {
                        reason: DropReason::ValleyViolation,
                        pkt: pkt.clone(),
                    },
                    &pkt,
                    None,
                ));
            }
        }
    }

    match intent {
        Intent::Deliver => {
            upd(cfg, topo, &mut pkt, None);
            let ev = done(Decision::Deliver(pkt.clone()), &pkt, None);
            Some(ev)
        }
        Intent::Continue => {
            upd(cfg, topo, &mut pkt, None);
            let ev = done(Decision::Forward {
                egress: Port::Internal,
            }, &pkt, None);
            rs.output.entry(Port::Internal).or_default().push_back(pkt);
            Some(ev)
        }
        Intent::Handoff => {
            // the owning router consumes the hop; this router only relays
            let ev = done(Decision::Forward {
                egress: Port::Internal,
            }, &pkt, None);
            rs.output.entry(Port::Internal).or_default().push_back(pkt);
            Some(ev)
        }
        Intent::External(i) => {
            upd(cfg, topo, &mut pkt, Some(i));
            let entry = pkt.history.last().cloned();
            let ev = done(
                Decision::Forward {
                    egress: Port::Ext(i),
                },
                &pkt,
                entry,
            );
            rs.output.entry(Port::Ext(i)).or_default().push_back(pkt);
            Some(ev)
        }
    }
}

/// Outcome of one send step.
#[derive(Clone, Debug)]
pub enum SendOutcome {
    Sent { tag: u64, to: Option<Endpoint> },
    NoLink { pkt: Packet },
}

/// Moves one packet from the `egress` output buffer onto the network: the
/// inter-AS channel for an external interface, the AS-internal network
/// otherwise. An unlinked egress drops the packet.
pub fn send(
    cfg: &RouterConfig,
    topo: &Topology,
    rs: &mut RouterState,
    net: &mut NetworkState,
    egress: Port,
) -> Option<SendOutcome> {
    let pkt = rs.output.get_mut(&egress)?.pop_front()?;
    let tag = pkt.tag;
    match egress {
        Port::Internal => {
            net.int
                .entry(cfg.as_id.clone())
                .or_default()
                .push_back(pkt);
            Some(SendOutcome::Sent { tag, to: None })
        }
        Port::Ext(i) => match topo.neighbor(&cfg.as_id, i) {
            Some((b, j)) => {
                net.ext
                    .entry((cfg.as_id.clone(), i, b.clone(), j))
                    .or_default()
                    .push_back(pkt);
                Some(SendOutcome::Sent { tag, to: Some((b, j)) })
            }
            None => Some(SendOutcome::NoLink { pkt }),
        },
    }
}

// ---------------------------------------------------------------------------
// Abstract model counterparts
// ---------------------------------------------------------------------------

/// Abstract interface guard: the concrete guard adds cryptographic and
/// switch-detail checks on top of this.
pub fn ifs_valid_abs(
    cfg: &RouterConfig,
    apkt: &AbstractPacket,
    ingress: Port,
    egress: Option<Port>,
) -> bool {
    let Some(seg) = apkt.segments.get(apkt.curr_seg) else {
        return false;
    };
    let n = seg.hops.len();
    if apkt.curr_hf >= n {
        return false;
    }
    let k = if seg.dir { apkt.curr_hf } else { n - 1 - apkt.curr_hf };
    let h = &seg.hops[k];
    let (t_in, t_eg) = if seg.dir {
        (h.prev, h.next)
    } else {
        (h.next, h.prev)
    };
    match egress {
        Some(Port::Ext(j)) => {
            if t_eg != Some(j) {
                return false;
            }
        }
        Some(Port::Internal) => match t_eg {
            Some(i) if !cfg.owns(i) => {}
            _ => return false,
        },
        None => {
            if t_eg.is_some() {
                return false;
            }
        }
    }
    if let Port::Ext(i) = ingress {
        if t_in != Some(i) || h.creator != cfg.as_id {
            return false;
        }
    }
    !(ingress == Port::Internal
        && egress == Some(Port::Internal)
        && !cfg.checks.allow_internal_to_internal)
}

/// Abstract update: advance the hop cursor and switch segments at
/// exhaustion.
pub fn upd_abs(apkt: &mut AbstractPacket) {
    if apkt.curr_seg >= apkt.segments.len() {
        return;
    }
    apkt.curr_hf += 1;
    if apkt.curr_hf >= apkt.segments[apkt.curr_seg].hops.len()
        && apkt.curr_seg + 1 < apkt.segments.len()
    {
        apkt.curr_seg += 1;
        apkt.curr_hf = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authseg::{auto_beacon, combine, SegmentKind};
    use crate::packet::abs;
    use crate::scenario::fig_topology;
    use crate::terms::NonceAlloc;
    use crate::topology::AsId;

    fn fig_setup() -> (Topology, crate::authseg::AuthSet) {
        let t = fig_topology();
        let mut alloc = NonceAlloc::new();
        let set = auto_beacon(&t, 3, &mut alloc);
        (t, set)
    }

    fn router(t: &Topology, a: &str) -> RouterConfig {
        RouterConfig::new(a.into(), t.interfaces_of(&a.into()), CheckFlags::verified())
    }

    fn fig3_packet(set: &crate::authseg::AuthSet) -> Packet {
        let a_d = set
            .find(SegmentKind::Down, &[AsId::new("A"), AsId::new("D")])
            .unwrap();
        let a_e_h = set
            .find(
                SegmentKind::Down,
                &[AsId::new("A"), AsId::new("E"), AsId::new("H")],
            )
            .unwrap();
        let plan = combine(&[
            (SegmentKind::Up, a_d.clone()),
            (SegmentKind::Down, a_e_h.clone()),
        ])
        .unwrap();
        Packet::from_plan(&plan, Vec::new())
    }

    /// Walks the fig packet to hop E by applying the updates D, A (switch),
    /// A (down segment) would apply.
    fn packet_at_hop_e(t: &Topology, set: &crate::authseg::AuthSet) -> Packet {
        let mut pkt = fig3_packet(set);
        let d = router(t, "D");
        let a = router(t, "A");
        upd(&d, t, &mut pkt, Some(IfId(1)));
        upd(&a, t, &mut pkt, None); // exhausts the up segment, switches
        upd(&a, t, &mut pkt, Some(IfId(4)));
        assert_eq!((pkt.curr_seg, pkt.curr_hf), (1, 1));
        pkt
    }

    #[test]
    fn ifs_valid_at_hop_e() {
        let (t, set) = fig_setup();
        let pkt = packet_at_hop_e(&t, &set);
        let e = router(&t, "E");
        // arrived from A over E1, leaving toward H over E3
        assert!(ifs_valid(&e, &t, &pkt, Port::Ext(IfId(1)), Some(Port::Ext(IfId(3)))));
        // egress pointing back toward A fails
        assert!(!ifs_valid(&e, &t, &pkt, Port::Ext(IfId(1)), Some(Port::Ext(IfId(1)))));
        // wrong ingress fails
        assert!(!ifs_valid(&e, &t, &pkt, Port::Ext(IfId(2)), Some(Port::Ext(IfId(3)))));
    }

    #[test]
    fn crypto_valid_along_the_whole_path() {
        let (t, set) = fig_setup();
        let backend = CryptoBackend::Symbolic;
        let mut pkt = fig3_packet(&set);
        // D: reverse direction hop
        let d = router(&t, "D");
        assert!(crypto_valid(&d, &backend, &pkt));
        upd(&d, &t, &mut pkt, Some(IfId(1)));
        // A: end of the up segment
        let a = router(&t, "A");
        assert!(crypto_valid(&a, &backend, &pkt));
        upd(&a, &t, &mut pkt, None);
        // A again: first hop of the down segment
        assert!(crypto_valid(&a, &backend, &pkt));
        upd(&a, &t, &mut pkt, Some(IfId(4)));
        // E then H
        let e = router(&t, "E");
        assert!(crypto_valid(&e, &backend, &pkt));
        upd(&e, &t, &mut pkt, Some(IfId(3)));
        let h = router(&t, "H");
        assert!(crypto_valid(&h, &backend, &pkt));
    }

    #[test]
    fn flipped_direction_fails_crypto() {
        let (t, set) = fig_setup();
        let mut pkt = fig3_packet(&set);
        // flipping dir without re-deriving the segment identifier breaks
        // validation at the first hop
        pkt.segments[0].dir = true;
        let d = router(&t, "D");
        assert!(!crypto_valid(&d, &CryptoBackend::Symbolic, &pkt));
    }

    #[test]
    fn forged_sigma_fails_crypto() {
        let (t, set) = fig_setup();
        let mut pkt = fig3_packet(&set);
        pkt.segments[0].hops[1].auth = mac(Term::Key("Z".into()), vec![Term::Nonce(1)]);
        let d = router(&t, "D");
        assert!(!crypto_valid(&d, &CryptoBackend::Symbolic, &pkt));
    }

    #[test]
    fn reverse_then_forward_update_restores_segid() {
        let (t, set) = fig_setup();
        let a_d = set
            .find(SegmentKind::Down, &[AsId::new("A"), AsId::new("D")])
            .unwrap();
        let plan = combine(&[(SegmentKind::Up, a_d.clone())]).unwrap();
        let mut pkt = Packet::from_plan(&plan, Vec::new());
        let before = pkt.segments[0].segid.clone();
        let d = router(&t, "D");
        upd(&d, &t, &mut pkt, None);
        // undo by XOR self-inverse
        let after = xor(
            pkt.segments[0].segid.clone(),
            pkt.segments[0].hops[1].auth.clone(),
        );
        assert_eq!(after, before);
    }

    #[test]
    fn first_hop_update_folds_sigma_into_segid() {
        let (t, set) = fig_setup();
        let a_e_h = set
            .find(
                SegmentKind::Down,
                &[AsId::new("A"), AsId::new("E"), AsId::new("H")],
            )
            .unwrap();
        let plan = combine(&[(SegmentKind::Down, a_e_h.clone())]).unwrap();
        let mut pkt = Packet::from_plan(&plan, Vec::new());
        let a = router(&t, "A");
        upd(&a, &t, &mut pkt, Some(IfId(4)));
        assert_eq!(
            pkt.segments[0].segid,
            xor(
                a_e_h.initial_segid().clone(),
                a_e_h.hops[0].auth.clone()
            )
        );
    }

    #[test]
    fn switch_checks_accept_the_fig_joint_and_reject_splices() {
        let (t, set) = fig_setup();
        let a = router(&t, "A");
        // honest joint at A
        let mut pkt = fig3_packet(&set);
        let d = router(&t, "D");
        upd(&d, &t, &mut pkt, Some(IfId(1)));
        assert!(ifs_check(&a, &t, &pkt, Port::Ext(IfId(3)), None).is_ok());
        // spliced joint: next segment starts mid-way through a core segment
        let core = set
            .find(SegmentKind::Core, &[AsId::new("C"), AsId::new("A"), AsId::new("B")])
            .unwrap();
        let mut spliced = pkt.clone();
        spliced.segments[1] = crate::packet::PacketSegment {
            dir: true,
            verify_only: false,
            segid: core.beta[1].clone(),
            hops: core.hops[1..].to_vec(),
        };
        assert_eq!(
            ifs_check(&a, &t, &spliced, Port::Ext(IfId(3)), None),
            Err(DropReason::BadSegmentSwitch)
        );
        // with switch checks off the splice passes the interface guard
        let mut lax = a.clone();
        lax.checks.segment_switch_checks = false;
        assert!(ifs_check(&lax, &t, &spliced, Port::Ext(IfId(3)), None).is_ok());
    }

    #[test]
    fn guard_strengthening_at_hop_e() {
        let (t, set) = fig_setup();
        let pkt = packet_at_hop_e(&t, &set);
        let e = router(&t, "E");
        let ingress = Port::Ext(IfId(1));
        let egress = Some(Port::Ext(IfId(3)));
        assert!(ifs_valid(&e, &t, &pkt, ingress, egress));
        assert!(crypto_valid(&e, &CryptoBackend::Symbolic, &pkt));
        assert!(ifs_valid_abs(&e, &abs(&pkt), ingress, egress));
    }

    #[test]
    fn recv_preserves_fifo_order() {
        let (t, set) = fig_setup();
        let d = router(&t, "D");
        let mut net = crate::sim::NetworkState::default();
        let mut p1 = fig3_packet(&set);
        p1.tag = 1;
        let mut p2 = fig3_packet(&set);
        p2.tag = 2;
        net.int.entry("D".into()).or_default().push_back(p1);
        net.int.entry("D".into()).or_default().push_back(p2);
        let mut rs = RouterState::new();
        assert_eq!(recv(&d, &t, &mut rs, &mut net, Port::Internal), Some(1));
        assert_eq!(recv(&d, &t, &mut rs, &mut net, Port::Internal), Some(2));
        // channel drained
        assert_eq!(recv(&d, &t, &mut rs, &mut net, Port::Internal), None);
        let q = rs.input.get(&Port::Internal).unwrap();
        assert_eq!(q[0].tag, 1);
        assert_eq!(q[1].tag, 2);
    }

    #[test]
    fn send_places_packets_on_channels() {
        let (t, set) = fig_setup();
        let d = router(&t, "D");
        let mut net = crate::sim::NetworkState::default();
        let mut rs = RouterState::new();
        let pkt = fig3_packet(&set);
        // linked external egress reaches the channel toward A
        rs.output.entry(Port::Ext(IfId(1))).or_default().push_back(pkt.clone());
        match send(&d, &t, &mut rs, &mut net, Port::Ext(IfId(1))) {
            Some(SendOutcome::Sent { to, .. }) => {
                assert_eq!(to, Some((AsId::new("A"), IfId(3))));
            }
            other => panic!("expected send, got {other:?}"),
        }
        assert_eq!(
            net.ext[&("D".into(), IfId(1), "A".into(), IfId(3))].len(),
            1
        );
        // internal egress lands in the AS pool
        rs.output.entry(Port::Internal).or_default().push_back(pkt.clone());
        send(&d, &t, &mut rs, &mut net, Port::Internal);
        assert_eq!(net.int[&AsId::new("D")].len(), 1);
        // unlinked egress is a drop
        rs.output.entry(Port::Ext(IfId(77))).or_default().push_back(pkt);
        assert!(matches!(
            send(&d, &t, &mut rs, &mut net, Port::Ext(IfId(77))),
            Some(SendOutcome::NoLink { .. })
        ));
    }

    #[test]
    fn unlinked_hop_egress_drops_no_such_link() {
        let (t, set) = fig_setup();
        let mut pkt = fig3_packet(&set);
        // bend the first traversal hop (D's, reversed) toward a
        // nonexistent interface
        pkt.segments[0].hops[1].prev = Some(IfId(42));
        let d = router(&t, "D");
        let mut rs = RouterState::new();
        rs.input.entry(Port::Internal).or_default().push_back(pkt);
        let ev = forward(&d, &t, &CryptoBackend::Symbolic, &mut rs, Port::Internal).unwrap();
        assert!(matches!(
            ev.decision,
            Decision::Drop {
                reason: DropReason::NoSuchLink,
                ..
            }
        ));
    }

    #[test]
    fn internal_to_internal_is_rejected_unless_allowed() {
        let (t, set) = fig_setup();
        let pkt = fig3_packet(&set);
        // a router of D owning no interfaces can only hand off internally
        let mut cfg = RouterConfig::new("D".into(), [], CheckFlags::verified());
        let mut rs = RouterState::new();
        rs.input.entry(Port::Internal).or_default().push_back(pkt.clone());
        let ev = forward(&cfg, &t, &CryptoBackend::Symbolic, &mut rs, Port::Internal).unwrap();
        assert!(matches!(
            ev.decision,
            Decision::Drop {
                reason: DropReason::InternalToInternal,
                ..
            }
        ));
        // the dedicated bug-reproduction flag lifts the rejection
        cfg.checks.allow_internal_to_internal = true;
        rs.input.entry(Port::Internal).or_default().push_back(pkt);
        let ev = forward(&cfg, &t, &CryptoBackend::Symbolic, &mut rs, Port::Internal).unwrap();
        assert!(matches!(
            ev.decision,
            Decision::Forward {
                egress: Port::Internal
            }
        ));
    }

    #[test]
    fn commuting_square_at_hop_e() {
        let (t, set) = fig_setup();
        let mut pkt = packet_at_hop_e(&t, &set);
        let e = router(&t, "E");
        let mut abstracted = abs(&pkt);
        upd(&e, &t, &mut pkt, Some(IfId(3)));
        upd_abs(&mut abstracted);
        let concrete_then_abs = abs(&pkt);
        assert_eq!(concrete_then_abs.curr_seg, abstracted.curr_seg);
        assert_eq!(concrete_then_abs.curr_hf, abstracted.curr_hf);
        assert_eq!(concrete_then_abs.segments, abstracted.segments);
    }
}
