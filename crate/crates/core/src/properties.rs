//! Trace-level checkers for path authorization, valley freedom, and loop
//! freedom, evaluated post-hoc over the ghost histories of honest
//! forwarding events.
//!
//! Traces are line-delimited structured records with a stable field order,
//! so fixture runs can be diffed byte for byte and re-checked offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::authseg::{AuthSet, SegmentKind};
use crate::packet::{HistoryEntry, SwitchMark};
use crate::router::{DropReason, Port};
use crate::topology::{AsId, Endpoint, IfId, LinkType};

/// Run metadata carried in the trace header.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceMeta {
    pub scenario: String,
    pub seed: u64,
    pub backend: String,
    pub mode: String,
    pub compromised: BTreeSet<AsId>,
}

/// One observable event of a run.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    Inject {
        tag: u64,
        accepted: bool,
        attacker: bool,
        target: String,
    },
    Recv {
        as_id: AsId,
        src: Port,
        tag: u64,
    },
    Forward {
        as_id: AsId,
        ingress: Port,
        egress: Port,
        tag: u64,
        cursor_before: (usize, usize),
        cursor_after: (usize, usize),
        entry: Option<HistoryEntry>,
    },
    Send {
        as_id: AsId,
        egress: Port,
        to: Option<Endpoint>,
        tag: u64,
    },
    Deliver {
        as_id: AsId,
        tag: u64,
    },
    Drop {
        as_id: AsId,
        ingress: Port,
        tag: u64,
        reason: DropReason,
    },
}

/// Ordered event record of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub events: Vec<TraceEvent>,
}

fn fmt_opt_if(i: Option<IfId>) -> String {
    crate::topology::fmt_ifid(i)
}

fn fmt_sw(m: SwitchMark) -> &'static str {
    match m {
        SwitchMark::None => "-",
        SwitchMark::Valid => "v",
        SwitchMark::Invalid => "i",
    }
}

impl Trace {
    /// Renders the trace as line-delimited records, one event per line,
    /// stable field order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# pathlab-trace v=1\n");
        out.push_str(&format!(
            "# scenario={} seed={} backend={} mode={}\n",
            self.meta.scenario, self.meta.seed, self.meta.backend, self.meta.mode
        ));
        let comp = if self.meta.compromised.is_empty() {
            "-".to_string()
        } else {
            self.meta
                .compromised
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!("# compromised={comp}\n"));
        for ev in &self.events {
            match ev {
                TraceEvent::Inject {
                    tag,
                    accepted,
                    attacker,
                    target,
                } => {
                    out.push_str(&format!(
                        "inject t={} ok={} src={} at={}\n",
                        tag,
                        if *accepted { "y" } else { "n" },
                        if *attacker { "attacker" } else { "honest" },
                        target
                    ));
                }
                TraceEvent::Recv { as_id, src, tag } => {
                    out.push_str(&format!("recv as={as_id} src={src} t={tag}\n"));
                }
                TraceEvent::Forward {
                    as_id,
                    ingress,
                    egress,
                    tag,
                    cursor_before,
                    cursor_after,
                    entry,
                } => {
                    let (link, lt, sw) = match entry {
                        Some(e) => (
                            format!(
                                "{}:{}>{}:{}",
                                e.from.0, e.from.1, e.to.0, e.to.1
                            ),
                            e.ltype.to_string(),
                            fmt_sw(e.pre_switch).to_string(),
                        ),
                        None => ("-".to_string(), "-".to_string(), "-".to_string()),
                    };
                    out.push_str(&format!(
                        "fwd as={} in={} out={} t={} cur={}.{}>{}.{} link={} lt={} sw={}\n",
                        as_id,
                        ingress,
                        egress,
                        tag,
                        cursor_before.0,
                        cursor_before.1,
                        cursor_after.0,
                        cursor_after.1,
                        link,
                        lt,
                        sw
                    ));
                }
                TraceEvent::Send {
                    as_id,
                    egress,
                    to,
                    tag,
                } => {
                    let to = match to {
                        Some((b, j)) => format!("{b}:{j}"),
                        None => "-".to_string(),
                    };
                    out.push_str(&format!("send as={as_id} out={egress} to={to} t={tag}\n"));
                }
                TraceEvent::Deliver { as_id, tag } => {
                    out.push_str(&format!("dlv as={as_id} t={tag}\n"));
                }
                TraceEvent::Drop {
                    as_id,
                    ingress,
                    tag,
                    reason,
                } => {
                    out.push_str(&format!(
                        "drop as={as_id} in={ingress} t={tag} why={reason}\n"
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {0}: {1}")]
    Bad(usize, String),
    #[error("missing trace header")]
    MissingHeader,
}

fn field<'a>(parts: &[&'a str], key: &str) -> Option<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn parse_port(s: &str) -> Option<Port> {
    if s == "int" {
        Some(Port::Internal)
    } else {
        s.parse::<u16>().ok().map(|v| Port::Ext(IfId(v)))
    }
}

fn parse_ltype(s: &str) -> Option<LinkType> {
    match s {
        "CustProv" => Some(LinkType::CustProv),
        "ProvCust" => Some(LinkType::ProvCust),
        "Core" => Some(LinkType::Core),
        _ => None,
    }
}

fn parse_endpoint(s: &str) -> Option<Endpoint> {
    let (a, i) = s.rsplit_once(':')?;
    Some((AsId::new(a), IfId(i.parse().ok()?)))
}

fn parse_reason(s: &str) -> Option<DropReason> {
    use DropReason::*;
    Some(match s {
        "NoHopField" => NoHopField,
        "IfaceMismatch" => IfaceMismatch,
        "CryptoInvalid" => CryptoInvalid,
        "BadSegmentSwitch" => BadSegmentSwitch,
        "TooManySegments" => TooManySegments,
        "ValleyViolation" => ValleyViolation,
        "NoSuchLink" => NoSuchLink,
        "InternalToInternal" => InternalToInternal,
        _ => return None,
    })
}

/// Parses a rendered trace back into its event record, for offline
/// re-checking.
pub fn parse_trace(text: &str) -> Result<Trace, TraceParseError> {
    let mut meta = TraceMeta::default();
    let mut events = Vec::new();
    let mut saw_header = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| TraceParseError::Bad(ln + 1, m.to_string());
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if rest.starts_with("pathlab-trace") {
                saw_header = true;
                continue;
            }
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if let Some(s) = field(&parts, "scenario") {
                meta.scenario = s.to_string();
            }
            if let Some(s) = field(&parts, "seed") {
                meta.seed = s.parse().map_err(|_| bad("seed"))?;
            }
            if let Some(s) = field(&parts, "backend") {
                meta.backend = s.to_string();
            }
            if let Some(s) = field(&parts, "mode") {
                meta.mode = s.to_string();
            }
            if let Some(s) = field(&parts, "compromised") {
                if s != "-" {
                    meta.compromised = s.split(',').map(AsId::new).collect();
                }
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let kind = parts.first().copied().unwrap_or_default();
        let tag: u64 = field(&parts, "t")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("tag"))?;
        match kind {
            "inject" => events.push(TraceEvent::Inject {
                tag,
                accepted: field(&parts, "ok") == Some("y"),
                attacker: field(&parts, "src") == Some("attacker"),
                target: field(&parts, "at").unwrap_or("-").to_string(),
            }),
            "recv" => events.push(TraceEvent::Recv {
                as_id: AsId::new(field(&parts, "as").ok_or_else(|| bad("as"))?),
                src: parse_port(field(&parts, "src").ok_or_else(|| bad("src"))?)
                    .ok_or_else(|| bad("src"))?,
                tag,
            }),
            "fwd" => {
                let cur = field(&parts, "cur").ok_or_else(|| bad("cur"))?;
                let (before, after) = cur.split_once('>').ok_or_else(|| bad("cur"))?;
                let pc = |s: &str| -> Option<(usize, usize)> {
                    let (a, b) = s.split_once('.')?;
                    Some((a.parse().ok()?, b.parse().ok()?))
                };
                let cursor_before = pc(before).ok_or_else(|| bad("cur"))?;
                let cursor_after = pc(after).ok_or_else(|| bad("cur"))?;
                let link = field(&parts, "link").ok_or_else(|| bad("link"))?;
                let entry = if link == "-" {
                    None
                } else {
                    let (from, to) = link.split_once('>').ok_or_else(|| bad("link"))?;
                    let from = parse_endpoint(from).ok_or_else(|| bad("link"))?;
                    let to = parse_endpoint(to).ok_or_else(|| bad("link"))?;
                    let ltype = parse_ltype(field(&parts, "lt").ok_or_else(|| bad("lt"))?)
                        .ok_or_else(|| bad("lt"))?;
                    let pre_switch = match field(&parts, "sw") {
                        Some("v") => SwitchMark::Valid,
                        Some("i") => SwitchMark::Invalid,
                        _ => SwitchMark::None,
                    };
                    Some(HistoryEntry {
                        from,
                        to,
                        ltype,
                        seg: cursor_before.0,
                        pre_switch,
                    })
                };
                events.push(TraceEvent::Forward {
                    as_id: AsId::new(field(&parts, "as").ok_or_else(|| bad("as"))?),
                    ingress: parse_port(field(&parts, "in").ok_or_else(|| bad("in"))?)
                        .ok_or_else(|| bad("in"))?,
                    egress: parse_port(field(&parts, "out").ok_or_else(|| bad("out"))?)
                        .ok_or_else(|| bad("out"))?,
                    tag,
                    cursor_before,
                    cursor_after,
                    entry,
                });
            }
            "send" => events.push(TraceEvent::Send {
                as_id: AsId::new(field(&parts, "as").ok_or_else(|| bad("as"))?),
                egress: parse_port(field(&parts, "out").ok_or_else(|| bad("out"))?)
                    .ok_or_else(|| bad("out"))?,
                to: match field(&parts, "to") {
                    Some("-") | None => None,
                    Some(s) => Some(parse_endpoint(s).ok_or_else(|| bad("to"))?),
                },
                tag,
            }),
            "dlv" => events.push(TraceEvent::Deliver {
                as_id: AsId::new(field(&parts, "as").ok_or_else(|| bad("as"))?),
                tag,
            }),
            "drop" => events.push(TraceEvent::Drop {
                as_id: AsId::new(field(&parts, "as").ok_or_else(|| bad("as"))?),
                ingress: parse_port(field(&parts, "in").ok_or_else(|| bad("in"))?)
                    .ok_or_else(|| bad("in"))?,
                tag,
                reason: parse_reason(field(&parts, "why").ok_or_else(|| bad("why"))?)
                    .ok_or_else(|| bad("why"))?,
            }),
            other => return Err(bad(&format!("unknown event kind {other}"))),
        }
    }
    if !saw_header {
        return Err(TraceParseError::MissingHeader);
    }
    Ok(Trace { meta, events })
}

// ---------------------------------------------------------------------------
// Checkers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    PathAuth,
    ValleyFree,
    LoopFree,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Property::PathAuth => write!(f, "path_authorization"),
            Property::ValleyFree => write!(f, "valley_freedom"),
            Property::LoopFree => write!(f, "loop_freedom"),
        }
    }
}

/// Loop-freedom evaluation mode: the weak form forgives loops containing at
/// least one compromised AS, the strengthened form only loops whose ASes
/// are all compromised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopMode {
    Weak,
    Strong,
}

/// One property violation with the offending history slice as witness.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub property: Property,
    pub tag: u64,
    pub mode: Option<LoopMode>,
    pub witness: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Some(LoopMode::Weak) => " mode=weak",
            Some(LoopMode::Strong) => " mode=strong",
            None => "",
        };
        write!(
            f,
            "violation property={} t={}{} witness={}",
            self.property, self.tag, mode, self.witness
        )
    }
}

/// Rebuilds each packet's ghost history from the forward events' appended
/// entries, in trace order.
pub fn histories(tr: &Trace) -> BTreeMap<u64, Vec<HistoryEntry>> {
    let mut out: BTreeMap<u64, Vec<HistoryEntry>> = BTreeMap::new();
    for ev in &tr.events {
        if let TraceEvent::Forward {
            tag,
            entry: Some(e),
            ..
        } = ev
        {
            out.entry(*tag).or_default().push(e.clone());
        }
    }
    out
}

fn render_entries(entries: &[HistoryEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            format!(
                "{}:{}>{}:{}({})",
                e.from.0, e.from.1, e.to.0, e.to.1, e.ltype
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Hop view of a traversal piece: interfaces are `None` where the piece
/// boundary leaves them unconstrained.
#[derive(Clone, Debug, PartialEq, Eq)]
struct PieceHop {
    as_id: AsId,
    ingress: Option<IfId>,
    egress: Option<IfId>,
}

fn piece_hops(entries: &[HistoryEntry]) -> Vec<PieceHop> {
    let mut hops = Vec::with_capacity(entries.len() + 1);
    hops.push(PieceHop {
        as_id: entries[0].from.0.clone(),
        ingress: None,
        egress: Some(entries[0].from.1),
    });
    for w in entries.windows(2) {
        debug_assert_eq!(w[0].to.0, w[1].from.0, "packets move only along links");
        hops.push(PieceHop {
            as_id: w[0].to.0.clone(),
            ingress: Some(w[0].to.1),
            egress: Some(w[1].from.1),
        });
    }
    let last = entries.last().unwrap();
    hops.push(PieceHop {
        as_id: last.to.0.clone(),
        ingress: Some(last.to.1),
        egress: None,
    });
    hops
}

/// Traversal hop sequence of an authorized segment in one direction:
/// `(AS, ingress, egress)` with the empty interface as `None`.
fn segment_traversal(
    seg: &crate::authseg::AuthSegment,
    dir: bool,
) -> Vec<(AsId, Option<IfId>, Option<IfId>)> {
    let fwd: Vec<_> = seg
        .hops
        .iter()
        .map(|h| (h.as_id.clone(), h.prev, h.next))
        .collect();
    if dir {
        fwd
    } else {
        fwd.into_iter()
            .rev()
            .map(|(a, p, n)| (a, n, p))
            .collect()
    }
}

fn sub_piece_matches(
    hops: &[PieceHop],
    traversals: &[Vec<(AsId, Option<IfId>, Option<IfId>)>],
) -> bool {
    if hops.is_empty() {
        return true;
    }
    traversals.iter().any(|t| {
        if t.len() < hops.len() {
            return false;
        }
        (0..=t.len() - hops.len()).any(|off| {
            hops.iter().enumerate().all(|(n, h)| {
                let (a, tin, teg) = &t[off + n];
                h.as_id == *a
                    && (h.ingress.is_none() || h.ingress == *tin)
                    && (h.egress.is_none() || h.egress == *teg)
            })
        })
    })
}

/// Path authorization: each traversal run delimited by structurally valid
/// segment switches must be an infix of some authorized segment, in the
/// traversed direction, after exempting hops at compromised ASes. Invalid
/// switches do not delimit, so a run spliced together from two segments
/// must match a single authorized segment as a whole, which flags it.
pub fn check_path_authorization(
    tr: &Trace,
    auth: &AuthSet,
    compromised: &BTreeSet<AsId>,
) -> Vec<Violation> {
    let mut traversals = Vec::with_capacity(auth.len() * 2);
    for seg in &auth.segments {
        traversals.push(segment_traversal(seg, true));
        traversals.push(segment_traversal(seg, false));
    }
    let mut out = Vec::new();
    for (tag, hist) in histories(tr) {
        // split at valid switches only
        let mut pieces: Vec<Vec<HistoryEntry>> = Vec::new();
        for e in hist {
            let split = e.pre_switch == SwitchMark::Valid;
            if split || pieces.is_empty() {
                pieces.push(Vec::new());
            }
            pieces.last_mut().unwrap().push(e);
        }
        for piece in &pieces {
            let hops = piece_hops(piece);
            // cut out compromised hops; each honest stretch must match
            let honest_ok = hops
                .split(|h| compromised.contains(&h.as_id))
                .all(|sub| sub_piece_matches(sub, &traversals));
            if !honest_ok {
                out.push(Violation {
                    property: Property::PathAuth,
                    tag,
                    mode: None,
                    witness: render_entries(piece),
                });
            }
        }
    }
    out
}

/// Valley freedom: no packet may traverse a customer-to-provider link after
/// a provider-to-customer link.
pub fn check_valley_freedom(tr: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    for (tag, hist) in histories(tr) {
        let Some(first_down) = hist.iter().position(|e| e.ltype == LinkType::ProvCust) else {
            continue;
        };
        if let Some(up) = hist[first_down + 1..]
            .iter()
            .position(|e| e.ltype == LinkType::CustProv)
        {
            let slice = &hist[first_down..=first_down + 1 + up];
            out.push(Violation {
                property: Property::ValleyFree,
                tag,
                mode: None,
                witness: render_entries(slice),
            });
        }
    }
    out
}

/// Loop freedom: no packet may traverse the same directed link twice. The
/// weak mode suppresses loops containing at least one compromised AS; the
/// strengthened mode suppresses only loops whose forwarding ASes are all
/// compromised.
pub fn check_loop_freedom(
    tr: &Trace,
    compromised: &BTreeSet<AsId>,
    mode: LoopMode,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (tag, hist) in histories(tr) {
        let mut seen: BTreeMap<(Endpoint, Endpoint), usize> = BTreeMap::new();
        for (idx, e) in hist.iter().enumerate() {
            let key = (e.from.clone(), e.to.clone());
            if let Some(&first) = seen.get(&key) {
                let on_loop: BTreeSet<&AsId> =
                    hist[first..idx].iter().map(|x| &x.from.0).collect();
                let suppressed = match mode {
                    LoopMode::Weak => on_loop.iter().any(|a| compromised.contains(*a)),
                    LoopMode::Strong => on_loop.iter().all(|a| compromised.contains(*a)),
                };
                if !suppressed {
                    out.push(Violation {
                        property: Property::LoopFree,
                        tag,
                        mode: Some(mode),
                        witness: render_entries(&hist[first..=idx]),
                    });
                }
            }
            seen.insert(key, idx);
        }
    }
    out
}

/// Convenience bundle of all three checkers over one trace.
#[derive(Clone, Debug, Default)]
pub struct ViolationReport {
    pub path_auth: Vec<Violation>,
    pub valley: Vec<Violation>,
    pub loop_weak: Vec<Violation>,
    pub loop_strong: Vec<Violation>,
}

impl ViolationReport {
    pub fn total(&self) -> usize {
        self.path_auth.len() + self.valley.len() + self.loop_weak.len() + self.loop_strong.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

pub fn check_all(tr: &Trace, auth: &AuthSet) -> ViolationReport {
    let compromised = &tr.meta.compromised;
    ViolationReport {
        path_auth: check_path_authorization(tr, auth, compromised),
        valley: check_valley_freedom(tr),
        loop_weak: check_loop_freedom(tr, compromised, LoopMode::Weak),
        loop_strong: check_loop_freedom(tr, compromised, LoopMode::Strong),
    }
}

/// Serializes an auth set for offline re-checking: one segment per line as
/// `segment <kind> <AS> <prev>:<next> ...`.
pub fn render_auth_set(auth: &AuthSet) -> String {
    let mut out = String::from("# pathlab-auth v=1\n");
    for seg in &auth.segments {
        out.push_str(&format!("segment {}", seg.kind));
        for h in &seg.hops {
            out.push_str(&format!(
                " {} {}:{}",
                h.as_id,
                fmt_opt_if(h.prev),
                fmt_opt_if(h.next)
            ));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthParseError {
    #[error("line {0}: {1}")]
    Bad(usize, String),
}

/// Parses [`render_auth_set`] output. The segments carry interface data
/// only; authenticators are rebuilt as placeholder nonces since the
/// checkers never look at them.
pub fn parse_auth_set(text: &str) -> Result<AuthSet, AuthParseError> {
    let mut segments = Vec::new();
    let mut nonce = 0u64;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| AuthParseError::Bad(ln + 1, m.to_string());
        let mut parts = line.split_whitespace();
        if parts.next() != Some("segment") {
            return Err(bad("expected segment line"));
        }
        let kind = match parts.next() {
            Some("up") => SegmentKind::Up,
            Some("core") => SegmentKind::Core,
            Some("down") => SegmentKind::Down,
            _ => return Err(bad("bad kind")),
        };
        let rest: Vec<&str> = parts.collect();
        if rest.is_empty() || rest.len() % 2 != 0 {
            return Err(bad("expected AS/interface pairs"));
        }
        let parse_if = |s: &str| -> Result<Option<IfId>, AuthParseError> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse::<u16>()
                    .map(|v| Some(IfId(v)))
                    .map_err(|_| bad("interface"))
            }
        };
        let mut hops = Vec::new();
        let mut beta = vec![crate::terms::Term::Nonce(nonce)];
        for pair in rest.chunks(2) {
            let (p, n) = pair[1].split_once(':').ok_or_else(|| bad("interfaces"))?;
            let hop = crate::authseg::HopField {
                as_id: AsId::new(pair[0]),
                prev: parse_if(p)?,
                next: parse_if(n)?,
                auth: crate::terms::Term::Nonce(nonce + 1),
            };
            nonce += 1;
            beta.push(crate::terms::Term::Nonce(nonce));
            hops.push(hop);
        }
        nonce += 1;
        segments.push(crate::authseg::AuthSegment { kind, hops, beta });
    }
    Ok(AuthSet { segments })
}
