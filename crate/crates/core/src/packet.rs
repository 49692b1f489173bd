//! Packet representations and the bit-exact wire codec.
//!
//! A packet carries up to three segments with per-segment direction flags
//! and mutable segment identifiers, plus cursors for the current segment and
//! hop field. The traversal history and the simulator tag are ghost state:
//! they are never marshaled and never influence forwarding decisions.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::authseg::{HopField, PathPlan};
use crate::terms::{concretize, mac, tup, xor, Auth6, KeyMaterial, Term};
use crate::topology::{AsId, IfId, LinkType, Topology};

/// Ghost marker describing segment switches that happened between two
/// recorded link traversals. `Valid` only if every switch in between met the
/// joint conditions (terminal hop, empty boundary interfaces, same AS).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum SwitchMark {
    #[default]
    None,
    Valid,
    Invalid,
}

impl SwitchMark {
    pub fn merge(self, valid: bool) -> SwitchMark {
        match (self, valid) {
            (SwitchMark::Invalid, _) | (_, false) => SwitchMark::Invalid,
            _ => SwitchMark::Valid,
        }
    }
}

/// One traversed inter-AS link, recorded by the forwarding AS. `ltype` is
/// the link type as seen from the forwarding side.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HistoryEntry {
    pub from: (AsId, IfId),
    pub to: (AsId, IfId),
    pub ltype: LinkType,
    pub seg: usize,
    pub pre_switch: SwitchMark,
}

/// One segment as embedded in a packet: hop fields in construction order, a
/// direction flag (`true` = construction direction), the mutable segment
/// identifier, and the legacy verify-only marking.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PacketSegment {
    pub dir: bool,
    pub verify_only: bool,
    pub segid: Term,
    pub hops: Vec<HopField>,
}

impl PacketSegment {
    /// Hop field at traversal position `t`, together with its traversal
    /// ingress/egress interfaces. For reversed segments the meaning of
    /// `prev` and `next` is swapped.
    pub fn traversal_hop(&self, t: usize) -> Option<(&HopField, Option<IfId>, Option<IfId>)> {
        let n = self.hops.len();
        if t >= n {
            return None;
        }
        let k = if self.dir { t } else { n - 1 - t };
        let h = &self.hops[k];
        let (t_in, t_eg) = if self.dir {
            (h.prev, h.next)
        } else {
            (h.next, h.prev)
        };
        Some((h, t_in, t_eg))
    }
}

/// A forwardable packet. Honest packets have one to three segments; the
/// structure does not enforce that bound because the attacker may inject
/// longer chains, which the router's segment-count guard rejects.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Packet {
    pub segments: Vec<PacketSegment>,
    pub curr_seg: usize,
    pub curr_hf: usize,
    pub payload: Vec<u8>,
    /// Ghost: simulator-assigned identity.
    pub tag: u64,
    /// Ghost: traversed links, appended by honest forwarding only.
    pub history: Vec<HistoryEntry>,
    /// Ghost: switches since the last recorded traversal.
    pub pending_switch: SwitchMark,
}

impl Packet {
    /// Builds the packet for a combined path: segment identifiers start at
    /// the initial chain value for forward traversal and at the final value
    /// for reverse traversal.
    pub fn from_plan(plan: &PathPlan, payload: Vec<u8>) -> Packet {
        let segments = plan
            .legs
            .iter()
            .map(|leg| PacketSegment {
                dir: leg.dir,
                verify_only: false,
                segid: if leg.dir {
                    leg.segment.initial_segid().clone()
                } else {
                    leg.segment.final_segid().clone()
                },
                hops: leg.segment.hops.clone(),
            })
            .collect();
        Packet {
            segments,
            curr_seg: 0,
            curr_hf: 0,
            payload,
            tag: 0,
            history: Vec::new(),
            pending_switch: SwitchMark::None,
        }
    }

    pub fn current_segment(&self) -> Option<&PacketSegment> {
        self.segments.get(self.curr_seg)
    }

    /// Current hop field with traversal-ingress/egress, if the cursor points
    /// at one.
    pub fn current_hop(&self) -> Option<(&HopField, Option<IfId>, Option<IfId>)> {
        self.current_segment()?.traversal_hop(self.curr_hf)
    }

    /// True when the current hop is the last of its segment.
    pub fn at_segment_end(&self) -> bool {
        self.current_segment()
            .map(|s| self.curr_hf + 1 == s.hops.len())
            .unwrap_or(false)
    }

    pub fn more_segments(&self) -> bool {
        self.curr_seg + 1 < self.segments.len()
    }

    /// Structural invariants the codec guarantees: one to three non-empty
    /// segments and in-range cursors.
    pub fn structurally_valid(&self) -> bool {
        (1..=3).contains(&self.segments.len())
            && self.segments.iter().all(|s| !s.hops.is_empty())
            && self.curr_seg < self.segments.len()
            && self.curr_hf <= self.segments[self.curr_seg].hops.len()
    }

    /// Wire-relevant equality: ignores the ghost tag, history, and switch
    /// bookkeeping.
    pub fn wire_eq(&self, other: &Packet) -> bool {
        self.segments == other.segments
            && self.curr_seg == other.curr_seg
            && self.curr_hf == other.curr_hf
            && self.payload == other.payload
    }

    /// Term encoding of the knowledge-bearing content: segment identifiers,
    /// hop fields in clear, and the opaque authenticators. Cursors and flags
    /// are attacker-chosen structure and carry no knowledge.
    pub fn encode(&self) -> Term {
        tup(self
            .segments
            .iter()
            .map(|s| {
                tup(std::iter::once(s.segid.clone())
                    .chain(s.hops.iter().map(|h| {
                        tup(vec![
                            Term::AsLit(h.as_id.clone()),
                            Term::IfLit(h.prev),
                            Term::IfLit(h.next),
                            h.auth.clone(),
                        ])
                    }))
                    .collect())
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Abstraction
// ---------------------------------------------------------------------------

/// Abstract hop: the authenticator is replaced by the name of the AS that
/// created it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AbsHop {
    pub creator: AsId,
    pub prev: Option<IfId>,
    pub next: Option<IfId>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AbsSegment {
    pub dir: bool,
    pub hops: Vec<AbsHop>,
}

/// Abstract counterpart of [`Packet`]: no segment identifiers, hop
/// authenticators replaced by AS names.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AbstractPacket {
    pub segments: Vec<AbsSegment>,
    pub curr_seg: usize,
    pub curr_hf: usize,
}

/// Maps each segment's cryptographically valid hop window to its abstract
/// counterpart, with cursors clamped into the surviving shape.
///
/// Validation is anchored at the current segment identifier: hop fields
/// ahead of the cursor are checked forward along the identifier chain and
/// truncated at the first invalid one; hop fields already consumed are
/// checked by rolling the chain back, so a consistent honest packet keeps
/// its full path. Total on attacker packets.
pub fn abs(pkt: &Packet) -> AbstractPacket {
    let mut segments = Vec::with_capacity(pkt.segments.len());
    let mut out_curr_hf = 0usize;
    for (idx, seg) in pkt.segments.iter().enumerate() {
        let n = seg.hops.len();
        let consumed = if idx < pkt.curr_seg {
            n
        } else if idx == pkt.curr_seg {
            pkt.curr_hf.min(n)
        } else {
            0
        };
        let check = |t: usize, anchor_before: &Term| -> bool {
            let k = if seg.dir { t } else { n - 1 - t };
            let h = &seg.hops[k];
            let body_beta = if seg.dir {
                anchor_before.clone()
            } else {
                xor(anchor_before.clone(), h.auth.clone())
            };
            h.auth
                == mac(
                    Term::Key(h.as_id.clone()),
                    vec![Term::IfLit(h.prev), Term::IfLit(h.next), body_beta],
                )
        };
        let sigma_at = |t: usize| -> Term {
            let k = if seg.dir { t } else { n - 1 - t };
            seg.hops[k].auth.clone()
        };
        // forward from the cursor
        let mut hi = consumed;
        let mut s = seg.segid.clone();
        while hi < n && check(hi, &s) {
            s = xor(s, sigma_at(hi));
            hi += 1;
        }
        // backward over the consumed part
        let mut lo = consumed;
        let mut s = seg.segid.clone();
        while lo > 0 {
            let t = lo - 1;
            // s is the identifier after consuming hop t; roll it back
            let before = xor(s.clone(), sigma_at(t));
            if !check(t, &before) {
                break;
            }
            s = before;
            lo -= 1;
        }
        // traversal window [lo, hi) as construction indices
        let (c_lo, c_hi) = if seg.dir { (lo, hi) } else { (n - hi, n - lo) };
        let hops = seg.hops[c_lo..c_hi]
            .iter()
            .map(|h| AbsHop {
                creator: h.as_id.clone(),
                prev: h.prev,
                next: h.next,
            })
            .collect();
        if idx == pkt.curr_seg {
            out_curr_hf = consumed - lo;
        }
        segments.push(AbsSegment { dir: seg.dir, hops });
    }
    AbstractPacket {
        curr_seg: pkt.curr_seg.min(pkt.segments.len()),
        curr_hf: out_curr_hf,
        segments,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("term is not a hop authenticator")]
    NotAnAuthenticator,
    #[error("identifier tail has no unique authenticator summand")]
    NoUniqueDecomposition,
}

/// Unfolds the nested structure of a hop authenticator into the hop list it
/// transitively authenticates, in construction order. At each level the
/// identifier in the MAC body is split as `tail ^ sigma'` where `sigma'` is
/// the unique MAC summand whose own body carries exactly the remaining
/// tail; the recursion bottoms out at the seed nonce. A checker-side
/// construct only: real authenticators have no internal structure.
pub fn extract_path(sigma: &Term) -> Result<Vec<(AsId, Option<IfId>, Option<IfId>)>, ExtractError> {
    fn unfold(
        sigma: &Term,
        out: &mut Vec<(AsId, Option<IfId>, Option<IfId>)>,
    ) -> Result<(), ExtractError> {
        let (key, body) = match sigma {
            Term::Mac(k, body) => (k.as_ref(), body),
            _ => return Err(ExtractError::NotAnAuthenticator),
        };
        let (as_id, prev, next, beta) = match (key, body.as_slice()) {
            (Term::Key(a), [Term::IfLit(p), Term::IfLit(nx), beta]) => (a, *p, *nx, beta),
            _ => return Err(ExtractError::NotAnAuthenticator),
        };
        match beta {
            Term::Nonce(_) => {}
            Term::Xor(elems) => {
                let mut found = None;
                for e in elems {
                    if let Term::Mac(_, inner_body) = e {
                        let tail = xor(beta.clone(), e.clone());
                        if inner_body.len() == 3 && inner_body[2] == tail {
                            if found.is_some() {
                                return Err(ExtractError::NoUniqueDecomposition);
                            }
                            found = Some(e.clone());
                        }
                    }
                }
                let inner = found.ok_or(ExtractError::NoUniqueDecomposition)?;
                unfold(&inner, out)?;
            }
            _ => return Err(ExtractError::NoUniqueDecomposition),
        }
        out.push((as_id.clone(), prev, next));
        Ok(())
    }
    let mut out = Vec::new();
    unfold(sigma, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Wire codec
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("input truncated")]
    Truncated,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("no segments present")]
    NoSegments,
    #[error("more than three segments")]
    TooManySegments,
    #[error("present segment has no hop fields")]
    EmptySegment,
    #[error("cursor out of range")]
    CursorOutOfRange,
    #[error("reserved flag bits set: {0:#04x}")]
    BadFlags(u8),
    #[error("unknown AS index {0}")]
    UnknownAsIndex(u16),
    #[error("authenticator bytes {0:02x?} have no recorded term")]
    UnknownAuth([u8; 6]),
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("payload exceeds the length field")]
    PayloadTooLong,
    #[error("hop count exceeds the wire limit")]
    TooManyHops,
    #[error("AS {0} is not in the codec context")]
    UnknownAs(AsId),
    #[error("cannot concretize: {0}")]
    Concretize(#[from] crate::terms::ConcretizeError),
}

/// Shared state for the wire codec: the AS index table, key material for
/// concretization, and the symbolic-to-concrete term mapping recorded while
/// marshaling. Unmarshal inverts authenticator bytes through that record.
#[derive(Clone, Debug)]
pub struct CodecContext {
    as_ids: Vec<AsId>,
    idx_of: BTreeMap<AsId, u16>,
    km: KeyMaterial,
    terms: BTreeMap<Auth6, Term>,
}

impl CodecContext {
    pub fn new(topo: &Topology) -> Self {
        let as_ids: Vec<AsId> = topo.ases.keys().cloned().collect();
        let idx_of = as_ids
            .iter()
            .enumerate()
            .map(|(n, a)| (a.clone(), n as u16))
            .collect();
        let km = KeyMaterial::derive(as_ids.iter().cloned());
        let mut terms = BTreeMap::new();
        terms.insert([0u8; 6], Term::Zero);
        CodecContext {
            as_ids,
            idx_of,
            km,
            terms,
        }
    }

    pub fn key_material(&self) -> &KeyMaterial {
        &self.km
    }

    fn record(&mut self, t: &Term) -> Result<Auth6, CodecError> {
        let img = concretize(t, &self.km)?;
        self.terms.entry(img).or_insert_with(|| t.clone());
        Ok(img)
    }
}

const EMPTY_IF: u16 = 0xffff;

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn ifid_wire(i: Option<IfId>) -> u16 {
    i.map(|x| x.0).unwrap_or(EMPTY_IF)
}

/// Serializes a packet to the fixed big-endian layout: version byte, cursor
/// byte (segment in the high two bits, hop field in the low six), three
/// segment-length bytes, then per present segment a flags byte, the 6-byte
/// concretized identifier and 12-byte hop records, and finally the
/// length-prefixed payload.
pub fn marshal(pkt: &Packet, ctx: &mut CodecContext) -> Result<Vec<u8>, CodecError> {
    if pkt.segments.is_empty() {
        return Err(CodecError::NoSegments);
    }
    if pkt.segments.len() > 3 {
        return Err(CodecError::TooManySegments);
    }
    if pkt.curr_seg >= pkt.segments.len()
        || pkt.curr_hf > pkt.segments[pkt.curr_seg].hops.len()
        || pkt.curr_hf > 0x3f
    {
        return Err(CodecError::CursorOutOfRange);
    }
    if pkt.payload.len() > u16::MAX as usize {
        return Err(CodecError::PayloadTooLong);
    }
    let mut buf = Vec::new();
    buf.push(1u8);
    buf.push(((pkt.curr_seg as u8) << 6) | (pkt.curr_hf as u8));
    for n in 0..3 {
        let len = pkt.segments.get(n).map(|s| s.hops.len()).unwrap_or(0);
        if pkt.segments.get(n).is_some() && len == 0 {
            return Err(CodecError::EmptySegment);
        }
        if len > 0xff {
            return Err(CodecError::TooManyHops);
        }
        buf.push(len as u8);
    }
    for seg in &pkt.segments {
        let mut flags = 0u8;
        if seg.dir {
            flags |= 0x01;
        }
        if seg.verify_only {
            flags |= 0x02;
        }
        buf.push(flags);
        buf.extend_from_slice(&ctx.record(&seg.segid)?);
        for h in &seg.hops {
            let idx = *ctx
                .idx_of
                .get(&h.as_id)
                .ok_or_else(|| CodecError::UnknownAs(h.as_id.clone()))?;
            put_u16(&mut buf, idx);
            put_u16(&mut buf, ifid_wire(h.prev));
            put_u16(&mut buf, ifid_wire(h.next));
            buf.extend_from_slice(&ctx.record(&h.auth)?);
        }
    }
    put_u16(&mut buf, pkt.payload.len() as u16);
    buf.extend_from_slice(&pkt.payload);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn auth6(&mut self) -> Result<Auth6, CodecError> {
        let b = self.take(6)?;
        let mut out = [0u8; 6];
        out.copy_from_slice(b);
        Ok(out)
    }
}

/// Parses wire bytes back into a packet, validating every bound and cursor
/// range before construction. A successful parse always yields a
/// structurally valid packet with fresh ghost state.
pub fn unmarshal(bytes: &[u8], ctx: &CodecContext) -> Result<Packet, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.u8()?;
    if version != 1 {
        return Err(CodecError::BadVersion(version));
    }
    let cursor = r.u8()?;
    let curr_seg = (cursor >> 6) as usize;
    let curr_hf = (cursor & 0x3f) as usize;
    let lens = [r.u8()? as usize, r.u8()? as usize, r.u8()? as usize];
    if lens[0] == 0 {
        if lens[1] == 0 && lens[2] == 0 {
            return Err(CodecError::NoSegments);
        }
        return Err(CodecError::EmptySegment);
    }
    if lens[1] == 0 && lens[2] != 0 {
        return Err(CodecError::EmptySegment);
    }
    let count = lens.iter().filter(|l| **l > 0).count();
    if curr_seg >= count {
        return Err(CodecError::CursorOutOfRange);
    }
    if curr_hf > lens[curr_seg] {
        return Err(CodecError::CursorOutOfRange);
    }
    let mut segments = Vec::with_capacity(count);
    for len in lens.iter().take(count) {
        let flags = r.u8()?;
        if flags & !0x03 != 0 {
            return Err(CodecError::BadFlags(flags));
        }
        let segid_bytes = r.auth6()?;
        let segid = ctx
            .terms
            .get(&segid_bytes)
            .cloned()
            .ok_or(CodecError::UnknownAuth(segid_bytes))?;
        let mut hops = Vec::with_capacity(*len);
        for _ in 0..*len {
            let idx = r.u16()?;
            let as_id = ctx
                .as_ids
                .get(idx as usize)
                .cloned()
                .ok_or(CodecError::UnknownAsIndex(idx))?;
            let prev = r.u16()?;
            let next = r.u16()?;
            let auth_bytes = r.auth6()?;
            let auth = ctx
                .terms
                .get(&auth_bytes)
                .cloned()
                .ok_or(CodecError::UnknownAuth(auth_bytes))?;
            hops.push(HopField {
                as_id,
                prev: (prev != EMPTY_IF).then_some(IfId(prev)),
                next: (next != EMPTY_IF).then_some(IfId(next)),
                auth,
            });
        }
        segments.push(PacketSegment {
            dir: flags & 0x01 != 0,
            verify_only: flags & 0x02 != 0,
            segid,
            hops,
        });
    }
    let payload_len = r.u16()? as usize;
    let payload = r.take(payload_len)?.to_vec();
    if r.pos != bytes.len() {
        return Err(CodecError::TrailingBytes);
    }
    let pkt = Packet {
        segments,
        curr_seg,
        curr_hf,
        payload,
        tag: 0,
        history: Vec::new(),
        pending_switch: SwitchMark::None,
    };
    debug_assert!(pkt.structurally_valid());
    Ok(pkt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authseg::{auto_beacon, combine, SegmentKind};
    use crate::scenario::fig_topology;
    use crate::terms::NonceAlloc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fig_packet() -> (Packet, Topology) {
        let t = fig_topology();
        let mut alloc = NonceAlloc::new();
        let set = auto_beacon(&t, 3, &mut alloc);
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
        (Packet::from_plan(&plan, b"pl".to_vec()), t)
    }

    #[test]
    fn abs_of_honest_packet_is_total_path() {
        let (pkt, _) = fig_packet();
        let a = abs(&pkt);
        assert_eq!(a.segments.len(), 2);
        assert_eq!(a.segments[0].hops.len(), 2);
        assert_eq!(a.segments[1].hops.len(), 3);
        assert_eq!(a.curr_seg, 0);
        assert_eq!(a.curr_hf, 0);
    }

    #[test]
    fn abs_truncates_invalid_suffix() {
        let (mut pkt, _) = fig_packet();
        // replace the last hop authenticator of the down segment
        pkt.segments[1].hops[2].auth = Term::Nonce(4242);
        let a = abs(&pkt);
        assert_eq!(a.segments[1].hops.len(), 2);
        assert_eq!(a.segments[1].hops[1].creator, AsId::new("E"));
    }

    #[test]
    fn abs_truncates_at_splice_point() {
        let t = fig_topology();
        let mut alloc = NonceAlloc::new();
        let set = auto_beacon(&t, 3, &mut alloc);
        let a_e_h = set
            .find(
                SegmentKind::Down,
                &[AsId::new("A"), AsId::new("E"), AsId::new("H")],
            )
            .unwrap();
        let c_e_h = set
            .find(
                SegmentKind::Down,
                &[AsId::new("C"), AsId::new("E"), AsId::new("H")],
            )
            .unwrap();
        // valid prefix of one segment, suffix hops of an unrelated one
        let mut hops = a_e_h.hops[..2].to_vec();
        hops.push(c_e_h.hops[2].clone());
        let pkt = Packet {
            segments: vec![PacketSegment {
                dir: true,
                verify_only: false,
                segid: a_e_h.initial_segid().clone(),
                hops,
            }],
            curr_seg: 0,
            curr_hf: 0,
            payload: Vec::new(),
            tag: 0,
            history: Vec::new(),
            pending_switch: SwitchMark::None,
        };
        let a = abs(&pkt);
        assert_eq!(a.segments[0].hops.len(), 2, "splice point truncates");
    }

    #[test]
    fn abs_clamps_the_cursor_into_the_surviving_window() {
        let (mut pkt, _) = fig_packet();
        // cursor on a corrupted current hop: the abstraction stays total
        // and the cursor lands at the end of what survives
        pkt.curr_seg = 1;
        pkt.curr_hf = 1;
        pkt.segments[1].hops[1].auth = Term::Nonce(31337);
        pkt.segments[1].segid = Term::Nonce(31338);
        let a = abs(&pkt);
        assert!(a.curr_hf <= a.segments[a.curr_seg].hops.len());
    }

    #[test]
    fn extract_path_single_hop() {
        let t = crate::topology::two_as();
        let s = crate::authseg::construct_segment(
            &t,
            SegmentKind::Down,
            &[
                ("A".into(), None, Some(IfId(1))),
                ("B".into(), Some(IfId(1)), None),
            ],
            Term::Nonce(5),
        )
        .unwrap();
        let got = extract_path(&s.hops[0].auth).unwrap();
        assert_eq!(got, vec![(AsId::new("A"), None, Some(IfId(1)))]);
        let got = extract_path(&s.hops[1].auth).unwrap();
        assert_eq!(
            got,
            vec![
                (AsId::new("A"), None, Some(IfId(1))),
                (AsId::new("B"), Some(IfId(1)), None),
            ]
        );
    }

    #[test]
    fn extract_path_rejects_malformed() {
        assert!(extract_path(&Term::Nonce(1)).is_err());
        let bad = mac(
            Term::Key("A".into()),
            vec![
                Term::IfLit(None),
                Term::IfLit(None),
                Term::AsLit("A".into()),
            ],
        );
        assert_eq!(
            extract_path(&bad),
            Err(ExtractError::NoUniqueDecomposition)
        );
    }

    #[test]
    fn marshal_roundtrip() {
        let (pkt, t) = fig_packet();
        let mut ctx = CodecContext::new(&t);
        let bytes = marshal(&pkt, &mut ctx).unwrap();
        let back = unmarshal(&bytes, &ctx).unwrap();
        assert!(back.wire_eq(&pkt));
    }

    #[test]
    fn unmarshal_rejects_truncated_and_empty() {
        let (pkt, t) = fig_packet();
        let mut ctx = CodecContext::new(&t);
        assert_eq!(unmarshal(&[], &ctx), Err(CodecError::Truncated));
        let bytes = marshal(&pkt, &mut ctx).unwrap();
        assert_eq!(
            unmarshal(&bytes[..bytes.len() - 1], &ctx),
            Err(CodecError::Truncated)
        );
        // zero segments
        let mut none = bytes.clone();
        none[2] = 0;
        none[3] = 0;
        none[4] = 0;
        assert!(matches!(
            unmarshal(&none, &ctx),
            Err(CodecError::NoSegments | CodecError::Truncated)
        ));
    }

    #[test]
    fn unmarshal_rejects_bad_cursor() {
        let (pkt, t) = fig_packet();
        let mut ctx = CodecContext::new(&t);
        let mut bytes = marshal(&pkt, &mut ctx).unwrap();
        bytes[1] = 0b10_000000; // segment 2 of 2
        assert_eq!(unmarshal(&bytes, &ctx), Err(CodecError::CursorOutOfRange));
        bytes[1] = 0b00_111111; // hop 63 of a 2-hop segment
        assert_eq!(unmarshal(&bytes, &ctx), Err(CodecError::CursorOutOfRange));
    }

    #[test]
    fn marshal_rejects_four_segments() {
        let (mut pkt, t) = fig_packet();
        let extra = pkt.segments[0].clone();
        pkt.segments.push(extra.clone());
        pkt.segments.push(extra);
        let mut ctx = CodecContext::new(&t);
        assert_eq!(marshal(&pkt, &mut ctx), Err(CodecError::TooManySegments));
    }

    #[test]
    fn fuzzed_bytes_never_panic() {
        let (pkt, t) = fig_packet();
        let mut ctx = CodecContext::new(&t);
        let valid = marshal(&pkt, &mut ctx).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..2000 {
            let bytes: Vec<u8> = if rng.gen_bool(0.5) {
                let n = rng.gen_range(0..64);
                (0..n).map(|_| rng.gen()).collect()
            } else {
                let mut b = valid.clone();
                for _ in 0..rng.gen_range(1..4) {
                    let i = rng.gen_range(0..b.len());
                    b[i] = rng.gen();
                }
                b
            };
            if let Ok(p) = unmarshal(&bytes, &ctx) {
                assert!(p.structurally_valid());
            }
        }
    }
}
